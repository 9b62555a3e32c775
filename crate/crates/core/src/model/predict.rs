use std::collections::HashMap;

use super::checkpoint::Checkpoint;
use super::train::predict_labels;
use super::{ModelError, Result};
use crate::align::{decode_labels, preprocess_sentence, ClassSpan, PreprocessedRecord, Subtask};
use crate::annotate::SyntaxAnnotation;
use crate::corpus::{ArgumentRecord, EventRecord, EventSchema, RawSentence};

fn span_text(chars: &[char], s: &ClassSpan) -> String {
    chars[s.start.min(chars.len())..s.end.min(chars.len())].iter().collect()
}

/// One event per trigger span; each carries every role span whose role the
/// schema permits for the trigger's type. A role span may join several events.
pub fn assemble_events(
    text: &str,
    triggers: &[ClassSpan],
    roles: &[ClassSpan],
    schema: &EventSchema,
) -> Vec<EventRecord> {
    let chars: Vec<char> = text.chars().collect();
    let mut roles: Vec<&ClassSpan> = roles.iter().collect();
    roles.sort_by_key(|s| (s.start, s.end));
    triggers
        .iter()
        .map(|t| EventRecord {
            event_type: t.class.clone(),
            trigger_text: span_text(&chars, t),
            trigger_start: t.start,
            arguments: roles
                .iter()
                .filter(|r| schema.permits(&t.class, &r.class))
                .map(|r| ArgumentRecord {
                    role: r.class.clone(),
                    text: span_text(&chars, r),
                    start: r.start,
                })
                .collect(),
        })
        .collect()
}

/// Trigger and role taggers applied in sequence.
#[derive(Debug)]
pub struct EventPipeline {
    pub trigger: Checkpoint,
    pub role: Checkpoint,
    pub batch_size: usize,
}

impl EventPipeline {
    pub fn new(trigger: Checkpoint, role: Checkpoint) -> Result<Self> {
        if trigger.meta.subtask != Subtask::Trigger || role.meta.subtask != Subtask::Role {
            return Err(ModelError::Config(format!(
                "expected a trigger and a role checkpoint, got {} and {}",
                trigger.meta.subtask, role.meta.subtask
            )));
        }
        let (t, r) = (&trigger.meta.dataset, &role.meta.dataset);
        if t.tokenizer != r.tokenizer || t.vocabs != r.vocabs || t.schema != r.schema {
            return Err(ModelError::Config(
                "trigger and role checkpoints were trained on different preprocessing".into(),
            ));
        }
        Ok(EventPipeline {
            trigger,
            role,
            batch_size: 16,
        })
    }

    pub fn schema(&self) -> &EventSchema {
        &self.trigger.meta.dataset.schema
    }

    /// Predicts events for each sentence. Sentences without an annotation
    /// get an empty event list.
    pub fn predict(
        &self,
        sentences: &[RawSentence],
        annotations: &HashMap<String, SyntaxAnnotation>,
    ) -> Result<Vec<RawSentence>> {
        let meta = &self.trigger.meta.dataset;
        let mut records: Vec<PreprocessedRecord> = Vec::new();
        let mut slot: Vec<Option<usize>> = Vec::with_capacity(sentences.len());
        for s in sentences {
            let bare = RawSentence {
                events: Vec::new(),
                ..s.clone()
            };
            match annotations.get(&s.id) {
                Some(ann) if !s.text.is_empty() => {
                    let (record, _) = preprocess_sentence(&bare, ann, meta)?;
                    slot.push(Some(records.len()));
                    records.push(record);
                }
                _ => {
                    log::warn!("{}: no annotation; predicting no events", s.id);
                    slot.push(None);
                }
            }
        }
        let trig = predict_labels(&self.trigger.model, &records, Subtask::Trigger, self.batch_size)?;
        let role = predict_labels(&self.role.model, &records, Subtask::Role, self.batch_size)?;
        Ok(sentences
            .iter()
            .zip(slot)
            .map(|(s, slot)| {
                let events = slot.map_or_else(Vec::new, |i| {
                    self.events_from_labels(&records[i], &trig[i], &role[i])
                });
                RawSentence {
                    id: s.id.clone(),
                    text: s.text.clone(),
                    events,
                }
            })
            .collect())
    }

    /// Predicts events for already preprocessed records; gold labels in the
    /// records are ignored.
    pub fn predict_records(&self, records: &[PreprocessedRecord]) -> Result<Vec<RawSentence>> {
        let trig = predict_labels(&self.trigger.model, records, Subtask::Trigger, self.batch_size)?;
        let role = predict_labels(&self.role.model, records, Subtask::Role, self.batch_size)?;
        Ok(records
            .iter()
            .enumerate()
            .map(|(i, r)| RawSentence {
                id: r.id.clone(),
                text: r.text.clone(),
                events: self.events_from_labels(r, &trig[i], &role[i]),
            })
            .collect())
    }

    pub fn events_from_labels(&self, record: &PreprocessedRecord, trigger: &[u32], role: &[u32]) -> Vec<EventRecord> {
        events_from_labels(
            record,
            trigger,
            role,
            self.trigger.meta.scheme(),
            self.role.meta.scheme(),
            self.schema(),
        )
    }
}

/// Decodes both label sequences of one record and assembles events.
pub fn events_from_labels(
    record: &PreprocessedRecord,
    trigger: &[u32],
    role: &[u32],
    trigger_scheme: &crate::align::LabelScheme,
    role_scheme: &crate::align::LabelScheme,
    schema: &EventSchema,
) -> Vec<EventRecord> {
    let triggers = decode_labels(trigger, &record.tokens, trigger_scheme);
    if triggers.is_empty() {
        return Vec::new();
    }
    let roles = decode_labels(role, &record.tokens, role_scheme);
    assemble_events(&record.text, &triggers, &roles, schema)
}
