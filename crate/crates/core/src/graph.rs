//! Token-level dependency graphs and the graph-convolution stack of the DP channel.
//!
//! Edges: each word's first token links to the first token of its head word,
//! consecutive tokens of one word are chained, and every token has a self-loop.
//! The adjacency is undirected and normalized as `D^-1/2 (A + I) D^-1/2`.
//! A layer computes `ReLU(Â · H · W + b)`.

use candle_core::{DType, Device, Tensor};
use thiserror::Error;

use crate::align::AlignedFeatures;

#[derive(Debug, Error)]
pub enum GraphError {
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error(transparent)]
    Tensor(#[from] candle_core::Error),
}

pub type Result<T> = std::result::Result<T, GraphError>;

#[derive(Debug, Clone, PartialEq)]
pub struct DependencyGraph {
    pub n: usize,
    /// Row-major `n × n`.
    pub norm_adjacency: Vec<f64>,
    /// Incoming dependency relation id per token (0 for specials).
    pub rel_ids: Vec<u32>,
    edges: Vec<(usize, usize)>,
}

impl DependencyGraph {
    /// Builds a graph from an explicit undirected edge list (self-loops are added).
    pub fn from_edges(n: usize, edges: &[(usize, usize)], rel_ids: Vec<u32>) -> Self {
        let mut adj = vec![0.0f64; n * n];
        for i in 0..n {
            adj[i * n + i] = 1.0;
        }
        let mut unique = Vec::new();
        for &(a, b) in edges {
            if a == b || a >= n || b >= n {
                continue;
            }
            if adj[a * n + b] == 0.0 {
                unique.push((a.min(b), a.max(b)));
            }
            adj[a * n + b] = 1.0;
            adj[b * n + a] = 1.0;
        }
        let degree: Vec<f64> = (0..n).map(|i| adj[i * n..(i + 1) * n].iter().sum()).collect();
        for i in 0..n {
            for j in 0..n {
                if adj[i * n + j] != 0.0 {
                    adj[i * n + j] /= (degree[i] * degree[j]).sqrt();
                }
            }
        }
        unique.sort_unstable();
        DependencyGraph {
            n,
            norm_adjacency: adj,
            rel_ids,
            edges: unique,
        }
    }

    /// Undirected non-self-loop edges, each as `(low, high)`, sorted.
    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    pub fn entry(&self, i: usize, j: usize) -> f64 {
        self.norm_adjacency[i * self.n + j]
    }

    pub fn adjacency_tensor(&self, dtype: DType, device: &Device) -> Result<Tensor> {
        Ok(Tensor::from_vec(self.norm_adjacency.clone(), (self.n, self.n), device)?.to_dtype(dtype)?)
    }

    /// Adjacency zero-padded to `len × len`; padding rows and columns stay zero.
    pub fn padded_adjacency(&self, len: usize) -> Vec<f64> {
        let mut out = vec![0.0; len * len];
        for i in 0..self.n.min(len) {
            for j in 0..self.n.min(len) {
                out[i * len + j] = self.norm_adjacency[i * self.n + j];
            }
        }
        out
    }
}

pub fn build_graph(feat: &AlignedFeatures) -> DependencyGraph {
    let n = feat.len();
    let mut first_token_of_word = std::collections::HashMap::new();
    for t in 0..n {
        if feat.word_index[t] >= 0 {
            first_token_of_word.entry(feat.word_index[t]).or_insert(t);
        }
    }
    let mut edges = Vec::new();
    for t in 0..n {
        let w = feat.word_index[t];
        if w < 0 {
            continue;
        }
        if first_token_of_word[&w] == t && feat.head_token[t] >= 0 {
            edges.push((t, feat.head_token[t] as usize));
        }
        if t + 1 < n && feat.word_index[t + 1] == w {
            edges.push((t, t + 1));
        }
    }
    DependencyGraph::from_edges(n, &edges, feat.dep_rel_ids.clone())
}

#[derive(Debug, Clone)]
pub struct GcnLayerParams {
    /// `d_in × d_out`
    pub weight: Tensor,
    /// `d_out`
    pub bias: Tensor,
}

impl GcnLayerParams {
    pub fn new(weight: Tensor, bias: Tensor) -> Result<Self> {
        let (_, d_out) = weight
            .dims2()
            .map_err(|_| GraphError::Shape(format!("weight must be 2-D, got {:?}", weight.dims())))?;
        if bias.dims() != [d_out] {
            return Err(GraphError::Shape(format!(
                "bias {:?} does not match weight output {d_out}",
                bias.dims()
            )));
        }
        Ok(GcnLayerParams { weight, bias })
    }

    pub fn d_in(&self) -> usize {
        self.weight.dims()[0]
    }

    pub fn d_out(&self) -> usize {
        self.weight.dims()[1]
    }
}

/// `ReLU(Â · H · W + b)`. `h` is `n × d_in` with `adjacency` `n × n`, or
/// batched `b × n × d_in` with `b × n × n`.
pub fn gcn_layer(h: &Tensor, adjacency: &Tensor, p: &GcnLayerParams) -> Result<Tensor> {
    let hd = h.dims();
    let ad = adjacency.dims();
    let ok = match (hd, ad) {
        ([n, d], [a0, a1]) => n == a0 && n == a1 && *d == p.d_in(),
        ([b, n, d], [ab, a0, a1]) => b == ab && n == a0 && n == a1 && *d == p.d_in(),
        _ => false,
    };
    if !ok {
        return Err(GraphError::Shape(format!(
            "H {hd:?}, adjacency {ad:?}, weight {:?}",
            p.weight.dims()
        )));
    }
    let mixed = adjacency.matmul(h)?;
    Ok(mixed
        .broadcast_matmul(&p.weight)?
        .broadcast_add(&p.bias)?
        .relu()?)
}

#[derive(Debug, Clone, Default)]
pub struct GcnStack {
    pub layers: Vec<GcnLayerParams>,
}

impl GcnStack {
    pub fn forward(&self, h0: &Tensor, adjacency: &Tensor) -> Result<Tensor> {
        let mut h = h0.clone();
        for layer in &self.layers {
            h = gcn_layer(&h, adjacency, layer)?;
        }
        Ok(h)
    }

    pub fn output_dim(&self, input_dim: usize) -> usize {
        self.layers.last().map_or(input_dim, GcnLayerParams::d_out)
    }
}

/// Looks relation ids up in `table`; ids outside the table map to row 0.
pub fn embed_relations(rel_ids: &[u32], table: &Tensor) -> Result<Tensor> {
    let rows = table.dims()[0] as u32;
    let ids: Vec<u32> = rel_ids.iter().map(|&r| if r < rows { r } else { 0 }).collect();
    let ids = Tensor::from_vec(ids, rel_ids.len(), table.device())?;
    Ok(table.index_select(&ids, 0)?)
}

/// Per-token DP embeddings for one sentence: relation embeddings propagated
/// through the layer stack over the sentence graph.
pub fn dp_channel_forward(g: &DependencyGraph, rel_table: &Tensor, stack: &GcnStack) -> Result<Tensor> {
    let h0 = embed_relations(&g.rel_ids, rel_table)?;
    let adj = g.adjacency_tensor(rel_table.dtype(), rel_table.device())?;
    stack.forward(&h0, &adj)
}
