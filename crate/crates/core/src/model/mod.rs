//! Tagger models: encoder channel, POS channel, DP-GCN channel, fusion head,
//! pipelined training, event assembly, and the ablation report.

mod ablation;
mod batch;
mod checkpoint;
mod encoder;
mod layers;
mod params;
mod predict;
mod tagger;
mod train;

use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use ablation::{
    run_ablation, AblationEntry, AblationReport, ReportRow, ReportTable, SubtaskResult, COLUMNS,
};
pub use batch::Batch;
pub use checkpoint::{Checkpoint, CheckpointMeta, CHECKPOINT_FORMAT};
pub use encoder::{preset_pretrained, Encoder, EncoderConfig};
pub use params::{Init, ParamStore};
pub use predict::{assemble_events, events_from_labels, EventPipeline};
pub use tagger::{masked_cross_entropy, TaggerModel, GROUPS};
pub use train::{
    predict_labels, score_records, select_best, train_subtask, EpochRecord, TrainConfig,
    TrainOutcome,
};

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("configuration: {0}")]
    Config(String),
    #[error("non-finite loss {value} at epoch {epoch}, batch {batch}")]
    NonFiniteLoss { epoch: usize, batch: usize, value: f64 },
    #[error("checkpoint {path}: {what}")]
    Checkpoint { path: String, what: String },
    #[error(transparent)]
    Tensor(#[from] candle_core::Error),
    #[error(transparent)]
    Graph(#[from] crate::graph::GraphError),
    #[error(transparent)]
    Align(#[from] crate::align::AlignError),
}

pub type Result<T> = std::result::Result<T, ModelError>;

/// The five model rows compared per encoder.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ModelVariant {
    /// Encoder output only (the baseline).
    EncoderOnly,
    /// One LSTM over POS embeddings, another over relation embeddings.
    PosDpRecurrent,
    /// Encoder output plus a POS embedding lookup.
    PosEmbedding,
    /// Encoder output plus GCN-propagated relation embeddings.
    DpGcn,
    /// Encoder output plus both syntactic channels.
    PosDpGcn,
}

impl ModelVariant {
    pub const ALL: [ModelVariant; 5] = [
        ModelVariant::EncoderOnly,
        ModelVariant::PosDpRecurrent,
        ModelVariant::PosEmbedding,
        ModelVariant::DpGcn,
        ModelVariant::PosDpGcn,
    ];

    /// Name used in report tables.
    pub fn display_name(self) -> &'static str {
        match self {
            ModelVariant::EncoderOnly => "BERT",
            ModelVariant::PosDpRecurrent => "POS-DP-LSTM-BERT",
            ModelVariant::PosEmbedding => "POS-Embedding-BERT",
            ModelVariant::DpGcn => "DP-GCN-BERT",
            ModelVariant::PosDpGcn => "POS-DP-GCN-BERT",
        }
    }

    /// Name used on the command line and in paths.
    pub fn slug(self) -> &'static str {
        match self {
            ModelVariant::EncoderOnly => "encoder-only",
            ModelVariant::PosDpRecurrent => "pos-dp-recurrent",
            ModelVariant::PosEmbedding => "pos-embedding",
            ModelVariant::DpGcn => "dp-gcn",
            ModelVariant::PosDpGcn => "pos-dp-gcn",
        }
    }

    pub fn uses_pos_embedding(self) -> bool {
        matches!(self, ModelVariant::PosEmbedding | ModelVariant::PosDpGcn)
    }

    pub fn uses_dp_gcn(self) -> bool {
        matches!(self, ModelVariant::DpGcn | ModelVariant::PosDpGcn)
    }

    pub fn uses_recurrent(self) -> bool {
        self == ModelVariant::PosDpRecurrent
    }

    pub fn needs_pos(self) -> bool {
        self.uses_pos_embedding() || self.uses_recurrent()
    }

    pub fn needs_dp(self) -> bool {
        self.uses_dp_gcn() || self.uses_recurrent()
    }
}

impl fmt::Display for ModelVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.slug())
    }
}

impl FromStr for ModelVariant {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        ModelVariant::ALL
            .into_iter()
            .find(|v| v.slug().eq_ignore_ascii_case(s) || v.display_name().eq_ignore_ascii_case(s))
            .ok_or_else(|| {
                let valid: Vec<&str> = ModelVariant::ALL.iter().map(|v| v.slug()).collect();
                format!("unknown variant {s:?} (valid: {})", valid.join(", "))
            })
    }
}

/// Channel sizes and regularization. Defaults: 2 GCN layers of width 64.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ChannelConfig {
    pub encoder_name: String,
    pub pos_embedding_dim: usize,
    pub dp_embedding_dim: usize,
    pub gcn_layers: usize,
    pub gcn_hidden: usize,
    pub recurrent_hidden: usize,
    pub fusion_hidden_sizes: Vec<usize>,
    pub dropout: f32,
}

impl Default for ChannelConfig {
    fn default() -> Self {
        ChannelConfig {
            encoder_name: STAND_IN_ENCODER.to_string(),
            pos_embedding_dim: 32,
            dp_embedding_dim: 32,
            gcn_layers: 2,
            gcn_hidden: 64,
            recurrent_hidden: 32,
            fusion_hidden_sizes: vec![128],
            dropout: 0.1,
        }
    }
}

pub const STAND_IN_ENCODER: &str = "tiny";

/// Where encoder weights come from.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum EncoderSource {
    /// Randomly initialized small encoder of the given shape.
    StandIn,
    /// Directory with `config.json`, `model.safetensors` and `vocab.txt`
    /// in the BERT layout.
    Pretrained(PathBuf),
}

/// Full shape of one tagger; stored in checkpoints.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub variant: ModelVariant,
    pub channels: ChannelConfig,
    pub encoder: EncoderConfig,
    pub pos_vocab_size: usize,
    pub dep_vocab_size: usize,
    pub num_labels: usize,
}

impl ModelConfig {
    /// Sizes the syntactic tables and the output layer from a dataset.
    pub fn for_dataset(
        variant: ModelVariant,
        channels: ChannelConfig,
        encoder: EncoderConfig,
        meta: &crate::align::DatasetMeta,
        subtask: crate::align::Subtask,
    ) -> Self {
        ModelConfig {
            variant,
            channels,
            encoder,
            pos_vocab_size: meta.vocabs.pos.len(),
            dep_vocab_size: meta.vocabs.dep.len(),
            num_labels: meta.scheme(subtask).len(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let c = &self.channels;
        let v = self.variant;
        let mut dims = vec![
            ("encoder hidden size", self.encoder.hidden_size),
            ("labels", self.num_labels),
        ];
        if v.needs_pos() {
            dims.push(("POS embedding dim", c.pos_embedding_dim));
        }
        if v.needs_dp() {
            dims.push(("DP embedding dim", c.dp_embedding_dim));
        }
        if v.uses_dp_gcn() && c.gcn_layers > 0 {
            dims.push(("GCN hidden", c.gcn_hidden));
        }
        if v.uses_recurrent() {
            dims.push(("recurrent hidden", c.recurrent_hidden));
        }
        dims.extend(c.fusion_hidden_sizes.iter().map(|&d| ("fusion hidden", d)));
        if let Some((name, _)) = dims.iter().find(|(_, d)| *d == 0) {
            return Err(ModelError::Config(format!("{name} must be positive")));
        }
        if v.needs_pos() && self.pos_vocab_size <= 1 {
            return Err(ModelError::Config(format!(
                "variant {v} needs POS features but the POS vocabulary is empty"
            )));
        }
        if v.needs_dp() && self.dep_vocab_size <= 1 {
            return Err(ModelError::Config(format!(
                "variant {v} needs dependency features but the relation vocabulary is empty"
            )));
        }
        if !(0.0..1.0).contains(&c.dropout) {
            return Err(ModelError::Config(format!("dropout {} outside [0, 1)", c.dropout)));
        }
        if !self.encoder.hidden_size.is_multiple_of(self.encoder.num_heads) {
            return Err(ModelError::Config("encoder hidden size not divisible by heads".into()));
        }
        Ok(())
    }

    /// Width of the concatenated per-token features fed to the fusion head.
    pub fn fusion_input_dim(&self) -> usize {
        let c = &self.channels;
        let mut dim = self.encoder.hidden_size;
        if self.variant.uses_pos_embedding() {
            dim += c.pos_embedding_dim;
        }
        if self.variant.uses_dp_gcn() {
            dim += if c.gcn_layers == 0 {
                c.dp_embedding_dim
            } else {
                c.gcn_hidden
            };
        }
        if self.variant.uses_recurrent() {
            dim += 2 * c.recurrent_hidden;
        }
        dim
    }
}
