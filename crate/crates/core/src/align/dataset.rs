use std::collections::HashMap;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::features::{align_tags, AlignedFeatures};
use super::labels::{encode_labels, EncodeReport, LabelScheme};
use super::tokenizer::{TokenSequence, Tokenizer};
use super::{AlignError, Result};
use crate::annotate::{SyntaxAnnotation, SyntaxVocabs};
use crate::corpus::{EventSchema, RawSentence};

pub const META_FILE: &str = "meta.json";

/// One sentence, ready for training: tokens, aligned syntax, and both
/// subtasks' labels.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PreprocessedRecord {
    pub id: String,
    pub text: String,
    pub tokens: TokenSequence,
    pub features: AlignedFeatures,
    pub trigger_labels: Vec<u32>,
    pub role_labels: Vec<u32>,
}

impl PreprocessedRecord {
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn labels(&self, subtask: super::Subtask) -> &[u32] {
        match subtask {
            super::Subtask::Trigger => &self.trigger_labels,
            super::Subtask::Role => &self.role_labels,
        }
    }
}

/// Everything needed to interpret the record files of one preprocessed dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetMeta {
    pub encoder: String,
    pub annotator_version: String,
    pub tokenizer: Tokenizer,
    pub vocabs: SyntaxVocabs,
    pub schema: EventSchema,
    pub trigger_scheme: LabelScheme,
    pub role_scheme: LabelScheme,
}

impl DatasetMeta {
    /// Label schemes for both subtasks are derived from `schema`.
    pub fn new(
        encoder: impl Into<String>,
        annotator_version: impl Into<String>,
        tokenizer: Tokenizer,
        vocabs: SyntaxVocabs,
        schema: EventSchema,
    ) -> Self {
        DatasetMeta {
            encoder: encoder.into(),
            annotator_version: annotator_version.into(),
            tokenizer,
            trigger_scheme: LabelScheme::for_schema(super::Subtask::Trigger, &schema),
            role_scheme: LabelScheme::for_schema(super::Subtask::Role, &schema),
            vocabs,
            schema,
        }
    }

    pub fn scheme(&self, subtask: super::Subtask) -> &LabelScheme {
        match subtask {
            super::Subtask::Trigger => &self.trigger_scheme,
            super::Subtask::Role => &self.role_scheme,
        }
    }

    pub fn write(&self, dir: &Path) -> Result<()> {
        let path = dir.join(META_FILE);
        let json = serde_json::to_string_pretty(self).expect("meta serializes");
        fs::write(&path, json).map_err(|e| dataset_err(&path, e))
    }

    pub fn read(dir: &Path) -> Result<Self> {
        let path = dir.join(META_FILE);
        let content = fs::read_to_string(&path).map_err(|e| dataset_err(&path, e))?;
        serde_json::from_str(&content).map_err(|e| dataset_err(&path, e))
    }
}

#[derive(Debug, Clone, Default)]
pub struct PreprocessReport {
    pub trigger: EncodeReport,
    pub role: EncodeReport,
}

pub fn preprocess_sentence(
    sentence: &RawSentence,
    ann: &SyntaxAnnotation,
    meta: &DatasetMeta,
) -> Result<(PreprocessedRecord, PreprocessReport)> {
    let tokens = meta.tokenizer.tokenize(&sentence.text)?;
    let features = align_tags(&tokens, ann, &meta.vocabs)?;
    let (trigger, trigger_report) = encode_labels(sentence, &tokens, &meta.trigger_scheme);
    let (role, role_report) = encode_labels(sentence, &tokens, &meta.role_scheme);
    Ok((
        PreprocessedRecord {
            id: sentence.id.clone(),
            text: sentence.text.clone(),
            tokens,
            features,
            trigger_labels: trigger.label_ids,
            role_labels: role.label_ids,
        },
        PreprocessReport {
            trigger: trigger_report,
            role: role_report,
        },
    ))
}

/// Drop and skip counts for one split, summed over both subtasks.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitSummary {
    pub records: usize,
    pub unannotated: usize,
    pub dropped_overlap: usize,
    pub dropped_truncated: usize,
    pub dropped_unknown_class: usize,
    pub snapped: usize,
}

/// Preprocesses every sentence that has an annotation, keeping input order.
pub fn preprocess_split(
    sentences: &[RawSentence],
    annotations: &HashMap<String, SyntaxAnnotation>,
    meta: &DatasetMeta,
) -> Result<(Vec<PreprocessedRecord>, SplitSummary)> {
    let results: Vec<Option<(PreprocessedRecord, PreprocessReport)>> = sentences
        .par_iter()
        .map(|s| match annotations.get(&s.id) {
            Some(ann) => preprocess_sentence(s, ann, meta).map(Some),
            None => Ok(None),
        })
        .collect::<Result<_>>()?;
    let mut summary = SplitSummary::default();
    let mut records = Vec::with_capacity(results.len());
    for r in results {
        let Some((record, report)) = r else {
            summary.unannotated += 1;
            continue;
        };
        for rep in [&report.trigger, &report.role] {
            summary.dropped_overlap += rep.dropped_overlap.len();
            summary.dropped_truncated += rep.dropped_truncated.len();
            summary.dropped_unknown_class += rep.dropped_unknown_class.len();
            summary.snapped += rep.snapped;
        }
        records.push(record);
    }
    summary.records = records.len();
    if summary.unannotated > 0 {
        log::warn!("{} sentences had no annotation and were left out", summary.unannotated);
    }
    Ok((records, summary))
}

pub fn write_records(path: &Path, records: &[PreprocessedRecord]) -> Result<()> {
    let file = fs::File::create(path).map_err(|e| dataset_err(path, e))?;
    let mut w = BufWriter::new(file);
    for r in records {
        let line = serde_json::to_string(r).expect("records serialize");
        writeln!(w, "{line}").map_err(|e| dataset_err(path, e))?;
    }
    w.flush().map_err(|e| dataset_err(path, e))
}

pub fn read_records(path: &Path) -> Result<Vec<PreprocessedRecord>> {
    let content = fs::read_to_string(path).map_err(|e| dataset_err(path, e))?;
    content
        .lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            let record: PreprocessedRecord = serde_json::from_str(l)
                .map_err(|e| dataset_err(path, format!("line {}: {e}", i + 1)))?;
            let n = record.tokens.len();
            let f = &record.features;
            if [f.pos_ids.len(), f.dep_rel_ids.len(), f.head_token.len(), f.word_index.len()]
                .iter()
                .chain([record.trigger_labels.len(), record.role_labels.len()].iter())
                .any(|&len| len != n)
            {
                return Err(dataset_err(path, format!("line {}: per-token lists disagree in length", i + 1)));
            }
            Ok(record)
        })
        .collect()
}

fn dataset_err(path: &Path, what: impl std::fmt::Display) -> AlignError {
    AlignError::Dataset {
        path: path.display().to_string(),
        what: what.to_string(),
    }
}
