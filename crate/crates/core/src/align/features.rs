use serde::{Deserialize, Serialize};

use super::tokenizer::TokenSequence;
use super::{AlignError, Result};
use crate::annotate::{SyntaxAnnotation, SyntaxVocabs};

/// Word-level syntax expanded onto encoder tokens. All vectors have one
/// entry per token; special tokens get id 0 and index -1.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AlignedFeatures {
    pub pos_ids: Vec<u32>,
    pub dep_rel_ids: Vec<u32>,
    pub ner_ids: Vec<u32>,
    /// First token of the syntactic head word; -1 for the root word and specials.
    pub head_token: Vec<i64>,
    pub word_index: Vec<i64>,
}

impl AlignedFeatures {
    pub fn len(&self) -> usize {
        self.pos_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pos_ids.is_empty()
    }
}

/// Assigns each token to the word containing its span midpoint, then copies
/// that word's tags onto the token.
pub fn align_tags(
    tokens: &TokenSequence,
    ann: &SyntaxAnnotation,
    vocabs: &SyntaxVocabs,
) -> Result<AlignedFeatures> {
    let heads = ann.heads().map_err(AlignError::Annotation)?;
    let relations = ann.relations();
    let n = tokens.len();
    let mut feat = AlignedFeatures {
        pos_ids: vec![0; n],
        dep_rel_ids: vec![0; n],
        ner_ids: vec![0; n],
        head_token: vec![-1; n],
        word_index: vec![-1; n],
    };
    let mut first_token: Vec<Option<usize>> = vec![None; ann.words.len()];
    for t in tokens.content() {
        let (s, e) = tokens.char_spans[t];
        let w = word_at_midpoint(&ann.word_spans, s, e);
        let (ws, we) = ann.word_spans[w];
        if s < ws || e > we {
            log::warn!(
                "token {:?} at {s}..{e} straddles word {:?} at {ws}..{we}; assigned by midpoint",
                tokens.tokens[t],
                ann.words[w]
            );
        }
        feat.word_index[t] = w as i64;
        feat.pos_ids[t] = vocabs.pos.id(&ann.pos_tags[w]);
        feat.dep_rel_ids[t] = vocabs.dep.id(relations[w]);
        feat.ner_ids[t] = vocabs.ner.id(&ann.ner_tags[w]);
        first_token[w].get_or_insert(t);
    }
    for t in tokens.content() {
        let w = feat.word_index[t] as usize;
        if let Some(h) = heads[w] {
            feat.head_token[t] = first_token[h].map_or(-1, |ft| ft as i64);
        }
    }
    Ok(feat)
}

/// Index of the word whose span contains the midpoint of `[s, e)`; falls back
/// to the nearest word when the midpoint lies between words.
fn word_at_midpoint(spans: &[(usize, usize)], s: usize, e: usize) -> usize {
    let mid2 = s + e;
    let idx = spans.partition_point(|&(_, we)| 2 * we <= mid2);
    if idx < spans.len() && 2 * spans[idx].0 <= mid2 {
        return idx;
    }
    let dist = |i: usize| {
        let (ws, we) = spans[i];
        if mid2 < 2 * ws {
            2 * ws - mid2
        } else {
            mid2.saturating_sub(2 * we)
        }
    };
    match (idx.checked_sub(1), idx < spans.len()) {
        (Some(prev), true) if dist(prev) <= dist(idx) => prev,
        (_, true) => idx,
        (Some(prev), false) => prev,
        (None, false) => 0,
    }
}
