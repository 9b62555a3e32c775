//! Differentiable building blocks. Layer norm and softmax are composed from
//! primitive ops so every parameter gets a gradient.

use candle_core::{DType, Tensor, D};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::params::{Init, ParamStore};
use super::Result;

/// `y = x Wᵀ + b` with `W` stored as `out × in`.
#[derive(Debug, Clone)]
pub struct Linear {
    pub weight: Tensor,
    pub bias: Tensor,
}

impl Linear {
    pub fn new(store: &mut ParamStore, name: &str, d_in: usize, d_out: usize, init: Init) -> Result<Self> {
        Ok(Linear {
            weight: store.get_or_init(&format!("{name}.weight"), &[d_out, d_in], init)?,
            bias: store.get_or_init(&format!("{name}.bias"), &[d_out], Init::Zeros)?,
        })
    }

    /// Default init of fully connected layers: uniform in `±1/sqrt(d_in)`.
    pub fn dense(store: &mut ParamStore, name: &str, d_in: usize, d_out: usize) -> Result<Self> {
        Self::new(store, name, d_in, d_out, Init::Uniform(1.0 / (d_in as f64).sqrt()))
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let dims = x.dims().to_vec();
        let d_in = *dims.last().expect("non-scalar input");
        let rows = x.elem_count() / d_in;
        let y = x
            .reshape((rows, d_in))?
            .matmul(&self.weight.t()?)?
            .broadcast_add(&self.bias)?;
        let mut out_dims = dims;
        *out_dims.last_mut().unwrap() = self.weight.dims()[0];
        Ok(y.reshape(out_dims)?)
    }
}

#[derive(Debug, Clone)]
pub struct Embedding {
    pub table: Tensor,
}

impl Embedding {
    pub fn new(store: &mut ParamStore, name: &str, rows: usize, dim: usize, init: Init) -> Result<Self> {
        Ok(Embedding {
            table: store.get_or_init(name, &[rows, dim], init)?,
        })
    }

    /// `ids` of any shape (u32) → `ids.shape × dim`. Out-of-range ids must be
    /// clamped by the caller.
    pub fn forward(&self, ids: &Tensor) -> Result<Tensor> {
        let mut dims = ids.dims().to_vec();
        dims.push(self.table.dims()[1]);
        let flat = ids.flatten_all()?;
        Ok(self.table.index_select(&flat, 0)?.reshape(dims)?)
    }
}

#[derive(Debug, Clone)]
pub struct LayerNorm {
    pub weight: Tensor,
    pub bias: Tensor,
    pub eps: f64,
}

impl LayerNorm {
    pub fn new(store: &mut ParamStore, name: &str, dim: usize, eps: f64) -> Result<Self> {
        Ok(LayerNorm {
            weight: store.get_or_init(&format!("{name}.weight"), &[dim], Init::Ones)?,
            bias: store.get_or_init(&format!("{name}.bias"), &[dim], Init::Zeros)?,
            eps,
        })
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let mean = x.mean_keepdim(D::Minus1)?;
        let centered = x.broadcast_sub(&mean)?;
        let var = centered.sqr()?.mean_keepdim(D::Minus1)?;
        let normed = centered.broadcast_div(&(var + self.eps)?.sqrt()?)?;
        Ok(normed.broadcast_mul(&self.weight)?.broadcast_add(&self.bias)?)
    }
}

/// Inverted dropout with a mask drawn from `rng`; identity when `rng` is `None`.
pub fn dropout(x: &Tensor, p: f32, rng: Option<&mut ChaCha8Rng>) -> Result<Tensor> {
    let Some(rng) = rng else {
        return Ok(x.clone());
    };
    if p <= 0.0 {
        return Ok(x.clone());
    }
    let scale = 1.0 / (1.0 - p);
    let mask: Vec<f32> = (0..x.elem_count())
        .map(|_| if rng.random::<f32>() < p { 0.0 } else { scale })
        .collect();
    let mask = Tensor::from_vec(mask, x.dims(), x.device())?.to_dtype(x.dtype())?;
    Ok((x * mask)?)
}

/// Unidirectional LSTM over `batch × time × d_in`, returning every step's
/// hidden state (`batch × time × hidden`). Gate order: input, forget, cell, output.
#[derive(Debug, Clone)]
pub struct Lstm {
    pub w_ih: Tensor,
    pub w_hh: Tensor,
    pub bias: Tensor,
    pub hidden: usize,
}

impl Lstm {
    pub fn new(store: &mut ParamStore, name: &str, d_in: usize, hidden: usize) -> Result<Self> {
        let bound = 1.0 / (hidden as f64).sqrt();
        Ok(Lstm {
            w_ih: store.get_or_init(&format!("{name}.w_ih"), &[4 * hidden, d_in], Init::Uniform(bound))?,
            w_hh: store.get_or_init(&format!("{name}.w_hh"), &[4 * hidden, hidden], Init::Uniform(bound))?,
            bias: store.get_or_init(&format!("{name}.bias"), &[4 * hidden], Init::Zeros)?,
            hidden,
        })
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let (b, t, d_in) = x.dims3()?;
        let h = self.hidden;
        // Input projections for all steps at once.
        let xw = x
            .reshape((b * t, d_in))?
            .matmul(&self.w_ih.t()?)?
            .broadcast_add(&self.bias)?
            .reshape((b, t, 4 * h))?;
        let w_hh_t = self.w_hh.t()?;
        let mut hs = Tensor::zeros((b, h), DType::F32, x.device())?;
        let mut cs = hs.clone();
        let mut outputs = Vec::with_capacity(t);
        for step in 0..t {
            let gates = (xw.narrow(1, step, 1)?.squeeze(1)? + hs.matmul(&w_hh_t)?)?;
            let i = candle_nn::ops::sigmoid(&gates.narrow(1, 0, h)?)?;
            let f = candle_nn::ops::sigmoid(&gates.narrow(1, h, h)?)?;
            let g = gates.narrow(1, 2 * h, h)?.tanh()?;
            let o = candle_nn::ops::sigmoid(&gates.narrow(1, 3 * h, h)?)?;
            cs = ((f * &cs)? + (i * g)?)?;
            hs = (o * cs.tanh()?)?;
            outputs.push(hs.clone());
        }
        Ok(Tensor::stack(&outputs, 1)?)
    }
}
