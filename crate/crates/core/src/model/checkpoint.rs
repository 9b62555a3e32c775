use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::params::ParamStore;
use super::tagger::TaggerModel;
use super::train::EpochRecord;
use super::{ModelConfig, ModelError, Result};
use crate::align::{DatasetMeta, LabelScheme, Subtask};

pub const CHECKPOINT_FORMAT: u32 = 1;
const META: &str = "checkpoint.json";
const WEIGHTS: &str = "weights.safetensors";

/// Everything needed to use a trained tagger without the original config.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub format: u32,
    pub subtask: Subtask,
    pub model: ModelConfig,
    pub dataset: DatasetMeta,
    pub history: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub seed: u64,
}

impl CheckpointMeta {
    pub fn scheme(&self) -> &LabelScheme {
        self.dataset.scheme(self.subtask)
    }

    pub fn loss_per_epoch(&self) -> f64 {
        super::train::mean_loss(&self.history)
    }
}

#[derive(Debug)]
pub struct Checkpoint {
    pub meta: CheckpointMeta,
    pub model: TaggerModel,
}

impl Checkpoint {
    pub fn save(dir: &Path, meta: &CheckpointMeta, model: &TaggerModel) -> Result<()> {
        let err = |e: std::io::Error| ckpt_err(dir, e);
        fs::create_dir_all(dir).map_err(err)?;
        model.store().save(&dir.join(WEIGHTS))?;
        let json = serde_json::to_string_pretty(meta).expect("checkpoint meta serializes");
        fs::write(dir.join(META), json).map_err(err)?;
        Ok(())
    }

    pub fn exists(dir: &Path) -> bool {
        dir.join(META).is_file() && dir.join(WEIGHTS).is_file()
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let text = fs::read_to_string(dir.join(META)).map_err(|e| ckpt_err(dir, e))?;
        let meta: CheckpointMeta = serde_json::from_str(&text).map_err(|e| ckpt_err(dir, e))?;
        if meta.format != CHECKPOINT_FORMAT {
            return Err(ckpt_err(dir, format!("unsupported format {}", meta.format)));
        }
        let tensors = ParamStore::load_tensors(&dir.join(WEIGHTS))?;
        let model = TaggerModel::build(meta.model.clone(), ParamStore::from_tensors(tensors))?;
        Ok(Checkpoint { meta, model })
    }
}

fn ckpt_err(dir: &Path, what: impl std::fmt::Display) -> ModelError {
    ModelError::Checkpoint {
        path: dir.display().to_string(),
        what: what.to_string(),
    }
}
