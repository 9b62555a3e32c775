//! Token-level precision/recall/F1 with DuEE matching rules.
//!
//! Text is compared character by character after simple lowercase folding.
//! A prediction is scored against the gold mention of the same key that gives
//! the highest pairwise F1 (first such mention on ties); gold mentions no
//! prediction selected count as misses over their full length.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::iter::Sum;
use std::ops::{Add, AddAssign};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::align::{ClassSpan, Subtask};
use crate::corpus::RawSentence;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("sentence ids differ between prediction and gold: missing from predictions {missing:?}, unknown to gold {extra:?}")]
    IdMismatch { missing: Vec<String>, extra: Vec<String> },
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct MatchCounts {
    pub tp: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
}

impl MatchCounts {
    pub fn new(tp: u64, fp: u64, fn_: u64) -> Self {
        MatchCounts { tp, fp, fn_ }
    }
}

impl Add for MatchCounts {
    type Output = MatchCounts;

    fn add(self, o: MatchCounts) -> MatchCounts {
        MatchCounts::new(self.tp + o.tp, self.fp + o.fp, self.fn_ + o.fn_)
    }
}

impl AddAssign for MatchCounts {
    fn add_assign(&mut self, o: MatchCounts) {
        *self = *self + o;
    }
}

impl Sum for MatchCounts {
    fn sum<I: Iterator<Item = MatchCounts>>(iter: I) -> Self {
        iter.fold(MatchCounts::default(), Add::add)
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Prf {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

fn ratio(num: u64, den: u64) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

/// Precision, recall and F1 from counts; every 0/0 is taken as 0.
pub fn prf(c: MatchCounts) -> Prf {
    let precision = ratio(c.tp, c.tp + c.fp);
    let recall = ratio(c.tp, c.tp + c.fn_);
    let f1 = if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    };
    Prf {
        precision,
        recall,
        f1,
    }
}

/// The count form of F1, `2tp / (2tp + fp + fn)`.
pub fn f1_from_counts(c: MatchCounts) -> f64 {
    ratio(2 * c.tp, 2 * c.tp + c.fp + c.fn_)
}

pub fn fold_case(text: &str) -> Vec<char> {
    text.chars()
        .map(|c| {
            let mut it = c.to_lowercase();
            match (it.next(), it.next()) {
                (Some(l), None) => l,
                _ => c,
            }
        })
        .collect()
}

/// Size of the multiset intersection of the two character sequences.
fn common_chars(a: &[char], b: &[char]) -> u64 {
    let mut counts: HashMap<char, i64> = HashMap::new();
    for &c in a {
        *counts.entry(c).or_default() += 1;
    }
    let mut common = 0;
    for &c in b {
        if let Some(n) = counts.get_mut(&c) {
            if *n > 0 {
                *n -= 1;
                common += 1;
            }
        }
    }
    common
}

/// Token counts for one prediction scored against one gold mention.
pub fn pair_counts(predicted: &str, gold: &str) -> MatchCounts {
    let p = fold_case(predicted);
    let g = fold_case(gold);
    let common = common_chars(&p, &g);
    MatchCounts::new(common, p.len() as u64 - common, g.len() as u64 - common)
}

pub fn pair_f1(predicted: &str, gold: &str) -> f64 {
    f1_from_counts(pair_counts(predicted, gold))
}

/// Picks the gold mention with the highest pairwise F1 (the first on ties).
/// Returns its index and the prediction's counts against it, or `None` if
/// there are no gold mentions.
pub fn match_argument<S: AsRef<str>>(predicted: &str, gold_mentions: &[S]) -> Option<(usize, MatchCounts)> {
    let mut best: Option<(usize, MatchCounts)> = None;
    for (i, g) in gold_mentions.iter().enumerate() {
        let c = pair_counts(predicted, g.as_ref());
        let better = match best {
            None => true,
            // Compare 2tp/(2tp+fp+fn) exactly by cross-multiplication.
            Some((_, b)) => {
                let (num, den) = (2 * c.tp, 2 * c.tp + c.fp + c.fn_);
                let (bnum, bden) = (2 * b.tp, 2 * b.tp + b.fp + b.fn_);
                (num as u128) * (bden as u128) > (bnum as u128) * (den as u128)
            }
        };
        if better {
            best = Some((i, c));
        }
    }
    best
}

/// Scores keyed mentions of one sentence.
pub fn score_keyed<K: Eq + std::hash::Hash + Ord>(
    predicted: &[(K, String)],
    gold: &[(K, String)],
) -> MatchCounts {
    let mut gold_by_key: BTreeMap<&K, Vec<&str>> = BTreeMap::new();
    for (k, text) in gold {
        gold_by_key.entry(k).or_default().push(text);
    }
    let mut used: HashSet<(&K, usize)> = HashSet::new();
    let mut total = MatchCounts::default();
    for (k, text) in predicted {
        match gold_by_key.get(k).and_then(|g| match_argument(text, g)) {
            Some((i, counts)) => {
                used.insert((k, i));
                total += counts;
            }
            None => total.fp += fold_case(text).len() as u64,
        }
    }
    for (k, mentions) in &gold_by_key {
        for (i, m) in mentions.iter().enumerate() {
            if !used.contains(&(*k, i)) {
                total.fn_ += fold_case(m).len() as u64;
            }
        }
    }
    total
}

/// Key of a scored mention: the event type for triggers, event type and role
/// for arguments.
pub type MentionKey = (String, Option<String>);

pub fn sentence_mentions(sentence: &RawSentence, subtask: Subtask) -> Vec<(MentionKey, String)> {
    match subtask {
        Subtask::Trigger => sentence
            .events
            .iter()
            .map(|e| ((e.event_type.clone(), None), e.trigger_text.clone()))
            .collect(),
        Subtask::Role => sentence
            .events
            .iter()
            .flat_map(|e| {
                e.arguments
                    .iter()
                    .map(|a| ((e.event_type.clone(), Some(a.role.clone())), a.text.clone()))
            })
            .collect(),
    }
}

/// Micro-averaged counts over a whole prediction file against gold.
pub fn score_dataset(
    predictions: &[RawSentence],
    golds: &[RawSentence],
    subtask: Subtask,
) -> Result<MatchCounts, EvalError> {
    let pred_by_id: HashMap<&str, &RawSentence> =
        predictions.iter().map(|s| (s.id.as_str(), s)).collect();
    let gold_ids: HashSet<&str> = golds.iter().map(|s| s.id.as_str()).collect();
    let mut missing: Vec<String> = gold_ids
        .iter()
        .filter(|id| !pred_by_id.contains_key(*id))
        .map(|s| s.to_string())
        .collect();
    let mut extra: Vec<String> = pred_by_id
        .keys()
        .filter(|id| !gold_ids.contains(*id))
        .map(|s| s.to_string())
        .collect();
    if !missing.is_empty() || !extra.is_empty() {
        missing.sort();
        extra.sort();
        return Err(EvalError::IdMismatch { missing, extra });
    }
    Ok(golds
        .par_iter()
        .map(|g| {
            let p = pred_by_id[g.id.as_str()];
            score_keyed(&sentence_mentions(p, subtask), &sentence_mentions(g, subtask))
        })
        .reduce(MatchCounts::default, Add::add))
}

/// Scores decoded class spans of one sentence, keyed by class.
pub fn score_spans(text: &str, predicted: &[ClassSpan], gold: &[ClassSpan]) -> MatchCounts {
    let chars: Vec<char> = text.chars().collect();
    let mentions = |spans: &[ClassSpan]| -> Vec<(String, String)> {
        spans
            .iter()
            .map(|s| {
                let end = s.end.min(chars.len());
                let start = s.start.min(end);
                (s.class.clone(), chars[start..end].iter().collect())
            })
            .collect()
    };
    score_keyed(&mentions(predicted), &mentions(gold))
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Section {
    pub counts: MatchCounts,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub loss_per_epoch: Option<f64>,
}

impl Section {
    pub fn from_counts(counts: MatchCounts) -> Self {
        let p = prf(counts);
        Section {
            counts,
            precision: p.precision,
            recall: p.recall,
            f1: p.f1,
            loss_per_epoch: None,
        }
    }
}

/// Overall counts are the sum of both subtasks' counts.
pub fn overall_score(trigger: &Section, role: &Section) -> Section {
    Section::from_counts(trigger.counts + role.counts)
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub trigger: Section,
    pub role: Section,
    pub overall: Section,
}

impl MetricsReport {
    pub fn new(trigger: Section, role: Section) -> Self {
        let overall = overall_score(&trigger, &role);
        MetricsReport {
            trigger,
            role,
            overall,
        }
    }
}

/// Scores a prediction file against gold for both subtasks.
pub fn evaluate(predictions: &[RawSentence], golds: &[RawSentence]) -> Result<MetricsReport, EvalError> {
    let trigger = Section::from_counts(score_dataset(predictions, golds, Subtask::Trigger)?);
    let role = Section::from_counts(score_dataset(predictions, golds, Subtask::Role)?);
    Ok(MetricsReport::new(trigger, role))
}
