//! BIOE label schemes for the trigger and role subtasks.

use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::tokenizer::TokenSequence;
use crate::corpus::{EventSchema, RawSentence};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Subtask {
    Trigger,
    Role,
}

impl Subtask {
    pub const ALL: [Subtask; 2] = [Subtask::Trigger, Subtask::Role];

    pub fn name(self) -> &'static str {
        match self {
            Subtask::Trigger => "trigger",
            Subtask::Role => "role",
        }
    }
}

impl fmt::Display for Subtask {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Subtask {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "trigger" => Ok(Subtask::Trigger),
            "role" => Ok(Subtask::Role),
            _ => Err(format!("unknown subtask {s:?} (valid: trigger, role)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Tag {
    Outside,
    Begin(usize),
    Inside(usize),
    End(usize),
}

/// `O` plus B-/I-/E- for every class, classes sorted by name. `O` is id 0.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(from = "SchemeRepr")]
pub struct LabelScheme {
    pub subtask: Subtask,
    classes: Vec<String>,
    #[serde(skip)]
    class_ids: HashMap<String, usize>,
}

#[derive(Deserialize)]
struct SchemeRepr {
    subtask: Subtask,
    classes: Vec<String>,
}

impl From<SchemeRepr> for LabelScheme {
    fn from(r: SchemeRepr) -> Self {
        LabelScheme::new(r.subtask, r.classes)
    }
}

impl LabelScheme {
    pub fn new(subtask: Subtask, classes: impl IntoIterator<Item = String>) -> Self {
        let mut classes: Vec<String> = classes.into_iter().collect();
        classes.sort();
        classes.dedup();
        let class_ids = classes.iter().enumerate().map(|(i, c)| (c.clone(), i)).collect();
        LabelScheme {
            subtask,
            classes,
            class_ids,
        }
    }

    /// Event types for the trigger subtask, role names for the role subtask.
    pub fn for_schema(subtask: Subtask, schema: &EventSchema) -> Self {
        match subtask {
            Subtask::Trigger => {
                LabelScheme::new(subtask, schema.event_types().map(str::to_string))
            }
            Subtask::Role => LabelScheme::new(subtask, schema.role_names()),
        }
    }

    pub fn len(&self) -> usize {
        1 + 3 * self.classes.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn classes(&self) -> &[String] {
        &self.classes
    }

    pub fn class_id(&self, class: &str) -> Option<usize> {
        self.class_ids.get(class).copied()
    }

    pub fn tag(&self, id: u32) -> Tag {
        let id = id as usize;
        if id == 0 || id >= self.len() {
            return Tag::Outside;
        }
        let class = (id - 1) / 3;
        match (id - 1) % 3 {
            0 => Tag::Begin(class),
            1 => Tag::Inside(class),
            _ => Tag::End(class),
        }
    }

    pub fn id(&self, tag: Tag) -> u32 {
        (match tag {
            Tag::Outside => 0,
            Tag::Begin(c) => 1 + 3 * c,
            Tag::Inside(c) => 2 + 3 * c,
            Tag::End(c) => 3 + 3 * c,
        }) as u32
    }

    pub fn label(&self, id: u32) -> String {
        match self.tag(id) {
            Tag::Outside => "O".to_string(),
            Tag::Begin(c) => format!("B-{}", self.classes[c]),
            Tag::Inside(c) => format!("I-{}", self.classes[c]),
            Tag::End(c) => format!("E-{}", self.classes[c]),
        }
    }

    pub fn labels(&self) -> Vec<String> {
        (0..self.len() as u32).map(|i| self.label(i)).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelSequence {
    pub label_ids: Vec<u32>,
}

/// A typed span in code points, `[start, end)`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ClassSpan {
    pub class: String,
    pub start: usize,
    pub end: usize,
}

/// Gold spans of one subtask: triggers typed by event type, or arguments
/// typed by role. Identical (class, span) pairs are listed once.
pub fn gold_spans(sentence: &RawSentence, subtask: Subtask) -> Vec<ClassSpan> {
    let mut spans: Vec<ClassSpan> = match subtask {
        Subtask::Trigger => sentence
            .events
            .iter()
            .map(|e| ClassSpan {
                class: e.event_type.clone(),
                start: e.trigger_start,
                end: e.trigger_end(),
            })
            .collect(),
        Subtask::Role => sentence
            .events
            .iter()
            .flat_map(|e| &e.arguments)
            .map(|a| ClassSpan {
                class: a.role.clone(),
                start: a.start,
                end: a.start + a.text.chars().count(),
            })
            .collect(),
    };
    let mut seen = std::collections::HashSet::new();
    spans.retain(|s| seen.insert(s.clone()));
    spans
}

/// What happened to gold spans during encoding.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct EncodeReport {
    pub encoded: Vec<ClassSpan>,
    pub dropped_overlap: Vec<ClassSpan>,
    pub dropped_truncated: Vec<ClassSpan>,
    pub dropped_unknown_class: Vec<ClassSpan>,
    pub snapped: usize,
}

pub fn encode_labels(
    sentence: &RawSentence,
    tokens: &TokenSequence,
    scheme: &LabelScheme,
) -> (LabelSequence, EncodeReport) {
    let mut report = EncodeReport::default();
    let mut labels = vec![0u32; tokens.len()];
    // (first token, last token, class id, span)
    let mut candidates = Vec::new();
    for span in gold_spans(sentence, scheme.subtask) {
        let Some(class) = scheme.class_id(&span.class) else {
            log::warn!("{}: class {:?} not in the label scheme", sentence.id, span.class);
            report.dropped_unknown_class.push(span);
            continue;
        };
        if tokens.truncated_at.is_some_and(|cut| span.end > cut) {
            report.dropped_truncated.push(span);
            continue;
        }
        let covered: Vec<usize> = tokens
            .content()
            .filter(|&t| {
                let (ts, te) = tokens.char_spans[t];
                ts < span.end && te > span.start
            })
            .collect();
        let (Some(&first), Some(&last)) = (covered.first(), covered.last()) else {
            report.dropped_truncated.push(span);
            continue;
        };
        if tokens.char_spans[first].0 != span.start || tokens.char_spans[last].1 != span.end {
            log::warn!(
                "{}: span {}..{} snapped to token boundaries {}..{}",
                sentence.id,
                span.start,
                span.end,
                tokens.char_spans[first].0,
                tokens.char_spans[last].1
            );
            report.snapped += 1;
        }
        candidates.push((first, last, class, span));
    }
    // Earlier start first, then longer.
    candidates.sort_by(|a, b| a.0.cmp(&b.0).then(b.1.cmp(&a.1)).then(a.2.cmp(&b.2)));
    let mut taken = vec![false; tokens.len()];
    for (first, last, class, span) in candidates {
        if taken[first..=last].iter().any(|&t| t) {
            log::warn!(
                "{}: {} span {:?} {}..{} overlaps an earlier span and is dropped",
                sentence.id,
                scheme.subtask,
                span.class,
                span.start,
                span.end
            );
            report.dropped_overlap.push(span);
            continue;
        }
        for (k, t) in (first..=last).enumerate() {
            taken[t] = true;
            labels[t] = scheme.id(if k == 0 {
                Tag::Begin(class)
            } else if t == last {
                Tag::End(class)
            } else {
                Tag::Inside(class)
            });
        }
        report.encoded.push(span);
    }
    (LabelSequence { label_ids: labels }, report)
}

/// Decodes spans from any label sequence. A run must start with `B`; `I`/`E`
/// tokens outside a run of their class are ignored; a run without `E` is
/// closed at its last token. Special tokens act as `O`.
pub fn decode_labels(labels: &[u32], tokens: &TokenSequence, scheme: &LabelScheme) -> Vec<ClassSpan> {
    let mut out = Vec::new();
    // (class, first token, last token)
    let mut open: Option<(usize, usize, usize)> = None;
    let close = |open: &mut Option<(usize, usize, usize)>, out: &mut Vec<ClassSpan>| {
        if let Some((class, first, last)) = open.take() {
            out.push(ClassSpan {
                class: scheme.classes[class].clone(),
                start: tokens.char_spans[first].0,
                end: tokens.char_spans[last].1,
            });
        }
    };
    for t in 0..tokens.len().min(labels.len()) {
        let tag = if tokens.special_mask[t] {
            Tag::Outside
        } else {
            scheme.tag(labels[t])
        };
        match tag {
            Tag::Outside => close(&mut open, &mut out),
            Tag::Begin(c) => {
                close(&mut open, &mut out);
                open = Some((c, t, t));
            }
            Tag::Inside(c) => match &mut open {
                Some((oc, _, last)) if *oc == c => *last = t,
                _ => close(&mut open, &mut out),
            },
            Tag::End(c) => {
                if let Some((oc, _, last)) = &mut open {
                    if *oc == c {
                        *last = t;
                    }
                }
                close(&mut open, &mut out);
            }
        }
    }
    close(&mut open, &mut out);
    out
}
