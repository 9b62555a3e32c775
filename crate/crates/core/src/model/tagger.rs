use std::collections::BTreeMap;

use candle_core::backprop::GradStore;
use candle_core::{Tensor, D};
use rand_chacha::ChaCha8Rng;

use super::batch::Batch;
use super::encoder::Encoder;
use super::layers::{dropout, Embedding, Linear, Lstm};
use super::params::{Init, ParamStore};
use super::{ModelConfig, ModelError, Result};
use crate::graph::{GcnLayerParams, GcnStack};

/// Parameter groups, named by the first segment of each parameter name.
pub const GROUPS: [&str; 6] = ["encoder", "pos", "dp", "gcn", "recurrent", "fusion"];

/// Encoder plus the variant's syntactic channels and the fusion head.
#[derive(Debug)]
pub struct TaggerModel {
    pub config: ModelConfig,
    store: ParamStore,
    encoder: Encoder,
    pos: Option<Embedding>,
    dp: Option<Embedding>,
    gcn: GcnStack,
    recurrent: Option<(Lstm, Lstm)>,
    fusion: Vec<Linear>,
    output: Linear,
}

impl TaggerModel {
    /// Builds every parameter of `config` from `store` (fresh or preset).
    pub fn build(config: ModelConfig, mut store: ParamStore) -> Result<Self> {
        config.validate()?;
        let c = &config.channels;
        let v = config.variant;
        let encoder = Encoder::new(&mut store, &config.encoder)?;
        let pos = if v.needs_pos() {
            Some(Embedding::new(&mut store, "pos.embedding", config.pos_vocab_size, c.pos_embedding_dim, Init::Normal(1.0))?)
        } else {
            None
        };
        let dp = if v.needs_dp() {
            Some(Embedding::new(&mut store, "dp.embedding", config.dep_vocab_size, c.dp_embedding_dim, Init::Normal(1.0))?)
        } else {
            None
        };
        let mut gcn = GcnStack::default();
        if v.uses_dp_gcn() {
            let mut d_in = c.dp_embedding_dim;
            for i in 0..c.gcn_layers {
                let bound = (6.0 / (d_in + c.gcn_hidden) as f64).sqrt();
                let weight = store.get_or_init(&format!("gcn.{i}.weight"), &[d_in, c.gcn_hidden], Init::Uniform(bound))?;
                let bias = store.get_or_init(&format!("gcn.{i}.bias"), &[c.gcn_hidden], Init::Zeros)?;
                gcn.layers.push(GcnLayerParams::new(weight, bias)?);
                d_in = c.gcn_hidden;
            }
        }
        let recurrent = if v.uses_recurrent() {
            Some((
                Lstm::new(&mut store, "recurrent.pos", c.pos_embedding_dim, c.recurrent_hidden)?,
                Lstm::new(&mut store, "recurrent.dp", c.dp_embedding_dim, c.recurrent_hidden)?,
            ))
        } else {
            None
        };
        let mut fusion = Vec::new();
        let mut d = config.fusion_input_dim();
        for (i, &width) in c.fusion_hidden_sizes.iter().enumerate() {
            fusion.push(Linear::dense(&mut store, &format!("fusion.{i}"), d, width)?);
            d = width;
        }
        let output = Linear::dense(&mut store, "fusion.out", d, config.num_labels)?;
        let unused = store.unused_presets();
        let foreign: Vec<&String> = unused.iter().filter(|n| !n.starts_with("encoder.")).collect();
        if !foreign.is_empty() {
            return Err(ModelError::Config(format!("stored parameters not used by the model: {foreign:?}")));
        }
        if !unused.is_empty() {
            log::debug!("{} pretrained tensors unused by the encoder", unused.len());
        }
        Ok(TaggerModel {
            config,
            store,
            encoder,
            pos,
            dp,
            gcn,
            recurrent,
            fusion,
            output,
        })
    }

    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        Self::build(config, ParamStore::new(seed))
    }

    pub fn store(&self) -> &ParamStore {
        &self.store
    }

    /// Per-token logits, `batch × time × labels`. Dropout is applied only
    /// when `rng` is given.
    pub fn forward(&self, batch: &Batch, mut rng: Option<&mut ChaCha8Rng>) -> Result<Tensor> {
        self.check_ids(batch)?;
        let p = self.config.channels.dropout;
        let mut parts = vec![self.encoder.forward(&batch.ids, &batch.mask, p, rng.as_deref_mut())?];
        let v = self.config.variant;
        if v.uses_pos_embedding() {
            parts.push(self.pos.as_ref().expect("pos channel").forward(&batch.pos_ids)?);
        }
        if v.uses_dp_gcn() {
            let h0 = self.dp.as_ref().expect("dp channel").forward(&batch.dep_ids)?;
            let adj = batch
                .adjacency
                .as_ref()
                .ok_or_else(|| ModelError::Config("DP-GCN variant needs a batch built with graphs".into()))?;
            parts.push(self.gcn.forward(&h0, adj)?);
        }
        if let Some((rp, rd)) = &self.recurrent {
            let pe = self.pos.as_ref().expect("pos channel").forward(&batch.pos_ids)?;
            let de = self.dp.as_ref().expect("dp channel").forward(&batch.dep_ids)?;
            parts.push(rp.forward(&pe)?);
            parts.push(rd.forward(&de)?);
        }
        let mut h = dropout(&Tensor::cat(&parts, D::Minus1)?, p, rng)?;
        for layer in &self.fusion {
            h = layer.forward(&h)?.relu()?;
        }
        self.output.forward(&h)
    }

    fn check_ids(&self, batch: &Batch) -> Result<()> {
        let checks = [
            (&batch.ids, self.config.encoder.vocab_size, "token", true),
            (&batch.pos_ids, self.config.pos_vocab_size, "POS", self.pos.is_some()),
            (&batch.dep_ids, self.config.dep_vocab_size, "relation", self.dp.is_some()),
        ];
        for (ids, rows, what, active) in checks {
            if !active || ids.elem_count() == 0 {
                continue;
            }
            let max = ids.max_all()?.to_scalar::<u32>()? as usize;
            if max >= rows {
                return Err(ModelError::Config(format!("{what} id {max} outside a table of {rows} rows")));
            }
        }
        Ok(())
    }

    pub fn loss(&self, batch: &Batch, rng: Option<&mut ChaCha8Rng>) -> Result<Tensor> {
        let logits = self.forward(batch, rng)?;
        masked_cross_entropy(&logits, &batch.labels, &batch.mask)
    }

    /// Argmax label per real token, one vector per record.
    pub fn predict(&self, batch: &Batch) -> Result<Vec<Vec<u32>>> {
        let best = self.forward(batch, None)?.argmax(D::Minus1)?.to_vec2::<u32>()?;
        Ok(best
            .into_iter()
            .zip(&batch.lengths)
            .map(|(row, &n)| row[..n].to_vec())
            .collect())
    }

    /// L2 norm of the gradient per parameter group present in the model.
    pub fn gradient_norms(&self, grads: &GradStore) -> Result<BTreeMap<String, f64>> {
        let mut sums: BTreeMap<String, f64> = BTreeMap::new();
        for (name, var) in self.store.vars() {
            let group = name.split('.').next().unwrap_or(name).to_string();
            let sq = match grads.get(var.as_tensor()) {
                Some(g) => g.sqr()?.sum_all()?.to_scalar::<f32>()? as f64,
                None => 0.0,
            };
            *sums.entry(group).or_default() += sq;
        }
        Ok(sums.into_iter().map(|(k, v)| (k, v.sqrt())).collect())
    }
}

/// Mean token cross-entropy over positions where `mask` is 1.
pub fn masked_cross_entropy(logits: &Tensor, labels: &Tensor, mask: &Tensor) -> Result<Tensor> {
    let logp = candle_nn::ops::log_softmax(logits, D::Minus1)?;
    let picked = logp.gather(&labels.unsqueeze(D::Minus1)?, D::Minus1)?.squeeze(D::Minus1)?;
    let total = (picked * mask)?.sum_all()?;
    let count = mask.sum_all()?;
    Ok((total.neg()? / count)?)
}
