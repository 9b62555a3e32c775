use std::time::Instant;

use candle_nn::optim::{AdamW, Optimizer, ParamsAdamW};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::batch::Batch;
use super::tagger::TaggerModel;
use super::{ModelError, Result};
use crate::align::{decode_labels, LabelScheme, PreprocessedRecord, Subtask};
use crate::eval::{score_spans, MatchCounts, Section};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub encoder_lr: f64,
    /// Learning rate of the channel and fusion parameters.
    pub head_lr: f64,
    pub weight_decay: f64,
    /// Stop after this many epochs without a new best validation F1.
    pub patience: Option<usize>,
    /// Stop as soon as validation F1 reaches this value.
    pub target_f1: Option<f64>,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 20,
            batch_size: 16,
            encoder_lr: 2e-5,
            head_lr: 2e-4,
            weight_decay: 0.01,
            patience: Some(5),
            target_f1: None,
            seed: 42,
        }
    }
}

impl TrainConfig {
    /// Settings for the randomly initialized stand-in encoder, which has to
    /// learn from scratch.
    pub fn stand_in() -> Self {
        TrainConfig {
            epochs: 50,
            batch_size: 4,
            encoder_lr: 1e-3,
            head_lr: 1e-2,
            ..TrainConfig::default()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Mean training cross-entropy per non-padding token.
    pub loss_per_token: f64,
    pub validation: Section,
    pub seconds: f64,
}

#[derive(Debug)]
pub struct TrainOutcome {
    /// Parameters restored to the best epoch.
    pub model: TaggerModel,
    pub history: Vec<EpochRecord>,
    pub best_epoch: usize,
}

impl TrainOutcome {
    pub fn best(&self) -> &EpochRecord {
        &self.history[self.best_epoch - 1]
    }

    /// Mean of the per-epoch training losses.
    pub fn loss_per_epoch(&self) -> f64 {
        mean_loss(&self.history)
    }
}

pub(crate) fn mean_loss(history: &[EpochRecord]) -> f64 {
    if history.is_empty() {
        return 0.0;
    }
    history.iter().map(|r| r.loss_per_token).sum::<f64>() / history.len() as f64
}

/// 1-based epoch of the first maximum, or `None` for an empty trace.
pub fn select_best(f1_trace: &[f64]) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (i, &f) in f1_trace.iter().enumerate() {
        if best.is_none_or(|(_, b)| f > b) {
            best = Some((i, f));
        }
    }
    best.map(|(i, _)| i + 1)
}

/// Trains one subtask's tagger. When `validation` is empty the training
/// records are used for model selection.
pub fn train_subtask(
    model: TaggerModel,
    train: &[PreprocessedRecord],
    validation: &[PreprocessedRecord],
    scheme: &LabelScheme,
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochRecord),
) -> Result<TrainOutcome> {
    if cfg.batch_size == 0 || cfg.epochs == 0 {
        return Err(ModelError::Config("epochs and batch size must be positive".into()));
    }
    if model.config.num_labels != scheme.len() {
        return Err(ModelError::Config(format!(
            "model has {} labels, scheme has {}",
            model.config.num_labels,
            scheme.len()
        )));
    }
    let subtask = scheme.subtask;
    let with_graph = model.config.variant.uses_dp_gcn();
    let selection = if validation.is_empty() { train } else { validation };
    let store = model.store();
    let mut encoder_opt = AdamW::new(
        store.group("encoder."),
        ParamsAdamW {
            lr: cfg.encoder_lr,
            weight_decay: cfg.weight_decay,
            ..ParamsAdamW::default()
        },
    )?;
    let head_vars = store
        .vars()
        .iter()
        .filter(|(k, _)| !k.starts_with("encoder."))
        .map(|(_, v)| v.clone())
        .collect();
    let mut head_opt = AdamW::new(
        head_vars,
        ParamsAdamW {
            lr: cfg.head_lr,
            weight_decay: cfg.weight_decay,
            ..ParamsAdamW::default()
        },
    )?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut history = Vec::new();
    let mut best: Option<(usize, f64, std::collections::BTreeMap<String, candle_core::Tensor>)> = None;
    for epoch in 1..=cfg.epochs {
        let started = Instant::now();
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        let mut tokens = 0usize;
        for (bi, chunk) in order.chunks(cfg.batch_size).enumerate() {
            let records: Vec<&PreprocessedRecord> = chunk.iter().map(|&i| &train[i]).collect();
            let batch = Batch::new(&records, subtask, with_graph)?;
            let loss = model.loss(&batch, Some(&mut rng))?;
            let value = loss.to_scalar::<f32>()? as f64;
            if !value.is_finite() {
                return Err(ModelError::NonFiniteLoss {
                    epoch,
                    batch: bi,
                    value,
                });
            }
            let grads = loss.backward()?;
            encoder_opt.step(&grads)?;
            head_opt.step(&grads)?;
            loss_sum += value * batch.token_count() as f64;
            tokens += batch.token_count();
        }
        let counts = score_records(&model, selection, scheme, cfg.batch_size.max(16))?;
        let record = EpochRecord {
            epoch,
            loss_per_token: if tokens == 0 { 0.0 } else { loss_sum / tokens as f64 },
            validation: Section::from_counts(counts),
            seconds: started.elapsed().as_secs_f64(),
        };
        log::info!(
            "{subtask} epoch {epoch}: loss/token {:.4}, F1 {:.4}",
            record.loss_per_token,
            record.validation.f1
        );
        on_epoch(&record);
        let f1 = record.validation.f1;
        history.push(record);
        if best.as_ref().is_none_or(|(_, b, _)| f1 > *b) {
            best = Some((epoch, f1, model.store().snapshot()?));
        }
        let (best_epoch, best_f1, _) = best.as_ref().expect("set above");
        if cfg.target_f1.is_some_and(|t| *best_f1 >= t) {
            break;
        }
        if cfg.patience.is_some_and(|p| epoch - best_epoch >= p) {
            log::info!("no improvement for {} epochs; stopping", epoch - best_epoch);
            break;
        }
    }
    let (best_epoch, _, snapshot) = best.expect("at least one epoch");
    model.store().restore(&snapshot)?;
    Ok(TrainOutcome {
        model,
        history,
        best_epoch,
    })
}

/// Predicted label ids for each record, in order.
pub fn predict_labels(
    model: &TaggerModel,
    records: &[PreprocessedRecord],
    subtask: Subtask,
    batch_size: usize,
) -> Result<Vec<Vec<u32>>> {
    let with_graph = model.config.variant.uses_dp_gcn();
    let mut out = Vec::with_capacity(records.len());
    for chunk in records.chunks(batch_size.max(1)) {
        let refs: Vec<&PreprocessedRecord> = chunk.iter().collect();
        out.extend(model.predict(&Batch::new(&refs, subtask, with_graph)?)?);
    }
    Ok(out)
}

/// Token-level counts of decoded predictions against the records' encoded
/// gold labels.
pub fn score_records(
    model: &TaggerModel,
    records: &[PreprocessedRecord],
    scheme: &LabelScheme,
    batch_size: usize,
) -> Result<MatchCounts> {
    let predictions = predict_labels(model, records, scheme.subtask, batch_size)?;
    Ok(records
        .iter()
        .zip(&predictions)
        .map(|(r, p)| {
            let pred = decode_labels(p, &r.tokens, scheme);
            let gold = decode_labels(r.labels(scheme.subtask), &r.tokens, scheme);
            score_spans(&r.text, &pred, &gold)
        })
        .sum())
}
