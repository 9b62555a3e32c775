use candle_core::{Device, Tensor};

use crate::align::{PreprocessedRecord, Subtask};
use crate::graph::build_graph;

use super::Result;

/// Records padded to a common length.
#[derive(Debug, Clone)]
pub struct Batch {
    /// `batch × time`, u32
    pub ids: Tensor,
    /// `batch × time`, f32; 1 for real tokens
    pub mask: Tensor,
    pub pos_ids: Tensor,
    pub dep_ids: Tensor,
    /// `batch × time × time`, normalized; `None` unless requested
    pub adjacency: Option<Tensor>,
    /// `batch × time`, u32; 0 at padding
    pub labels: Tensor,
    pub lengths: Vec<usize>,
}

impl Batch {
    pub fn new(records: &[&PreprocessedRecord], subtask: Subtask, with_graph: bool) -> Result<Self> {
        let len = records.iter().map(|r| r.len()).max().unwrap_or(0);
        Self::padded(records, subtask, with_graph, len)
    }

    /// Like `new`, padded to at least `min_len`.
    pub fn padded(
        records: &[&PreprocessedRecord],
        subtask: Subtask,
        with_graph: bool,
        min_len: usize,
    ) -> Result<Self> {
        let b = records.len();
        let t = records.iter().map(|r| r.len()).max().unwrap_or(0).max(min_len);
        let mut ids = vec![0u32; b * t];
        let mut mask = vec![0f32; b * t];
        let mut pos = vec![0u32; b * t];
        let mut dep = vec![0u32; b * t];
        let mut labels = vec![0u32; b * t];
        let mut adj = if with_graph { vec![0f32; b * t * t] } else { Vec::new() };
        for (i, r) in records.iter().enumerate() {
            let n = r.len();
            let row = i * t;
            ids[row..row + n].copy_from_slice(&r.tokens.ids);
            mask[row..row + n].fill(1.0);
            pos[row..row + n].copy_from_slice(&r.features.pos_ids);
            dep[row..row + n].copy_from_slice(&r.features.dep_rel_ids);
            labels[row..row + n].copy_from_slice(r.labels(subtask));
            if with_graph {
                let g = build_graph(&r.features).padded_adjacency(t);
                for (dst, src) in adj[i * t * t..(i + 1) * t * t].iter_mut().zip(g) {
                    *dst = src as f32;
                }
            }
        }
        let dev = Device::Cpu;
        Ok(Batch {
            ids: Tensor::from_vec(ids, (b, t), &dev)?,
            mask: Tensor::from_vec(mask, (b, t), &dev)?,
            pos_ids: Tensor::from_vec(pos, (b, t), &dev)?,
            dep_ids: Tensor::from_vec(dep, (b, t), &dev)?,
            adjacency: if with_graph {
                Some(Tensor::from_vec(adj, (b, t, t), &dev)?)
            } else {
                None
            },
            labels: Tensor::from_vec(labels, (b, t), &dev)?,
            lengths: records.iter().map(|r| r.len()).collect(),
        })
    }

    pub fn size(&self) -> usize {
        self.lengths.len()
    }

    pub fn max_len(&self) -> usize {
        self.ids.dims()[1]
    }

    pub fn token_count(&self) -> usize {
        self.lengths.iter().sum()
    }
}
