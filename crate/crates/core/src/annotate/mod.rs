//! Word-level syntactic annotation (segmentation, POS, NER, dependency tree)
//! obtained from an external annotator, plus the tag vocabularies.

mod backend;
mod cache;

use std::collections::HashMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use backend::{
    corenlp_to_annotation, AnnotatorBackend, CommandAnnotator, CoreNlpAnnotator, FixtureAnnotator,
};
pub use cache::{AnnotationCache, CacheEntry};

use crate::corpus::RawSentence;

#[derive(Debug, Error)]
pub enum AnnotateError {
    #[error("cannot annotate empty text")]
    EmptyText,
    #[error("annotator backend unavailable: {0}")]
    Transport(String),
    #[error("annotator backend failed: {0}")]
    Backend(String),
    #[error("invalid annotation: {0}")]
    Invalid(String),
    #[error("annotation cache {path}: {source}")]
    CacheIo {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T> = std::result::Result<T, AnnotateError>;

/// One dependency arc. `head` is -1 for the root word.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DepEdge {
    pub head: i64,
    pub dependent: usize,
    pub relation: String,
}

impl DepEdge {
    pub fn new(head: i64, dependent: usize, relation: impl Into<String>) -> Self {
        DepEdge {
            head,
            dependent,
            relation: relation.into(),
        }
    }
}

/// Word spans are `[start, end)` in code points.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SyntaxAnnotation {
    pub words: Vec<String>,
    pub word_spans: Vec<(usize, usize)>,
    pub pos_tags: Vec<String>,
    pub ner_tags: Vec<String>,
    pub dep_edges: Vec<DepEdge>,
    pub root_index: usize,
}

impl SyntaxAnnotation {
    /// Verifies lengths, span coverage of `text`, and the single-root tree property.
    pub fn validate(&self, text: &str) -> std::result::Result<(), String> {
        let n = self.words.len();
        if n == 0 {
            return Err("no words".into());
        }
        if self.pos_tags.len() != n || self.ner_tags.len() != n || self.word_spans.len() != n {
            return Err(format!(
                "length mismatch: {} words, {} spans, {} POS, {} NER",
                n,
                self.word_spans.len(),
                self.pos_tags.len(),
                self.ner_tags.len()
            ));
        }
        let chars: Vec<char> = text.chars().collect();
        let mut cursor = 0;
        for (i, (&(start, end), word)) in self.word_spans.iter().zip(&self.words).enumerate() {
            if start >= end || end > chars.len() {
                return Err(format!("word {i} has bad span {start}..{end}"));
            }
            if start < cursor {
                return Err(format!("word {i} span {start}..{end} overlaps or is unsorted"));
            }
            if chars[cursor..start].iter().any(|c| !c.is_whitespace()) {
                return Err(format!("text before word {i} is not covered by any word"));
            }
            let slice: String = chars[start..end].iter().collect();
            if &slice != word {
                return Err(format!("word {i} {word:?} does not match text {slice:?}"));
            }
            cursor = end;
        }
        if chars[cursor..].iter().any(|c| !c.is_whitespace()) {
            return Err("text after the last word is not covered".into());
        }
        self.heads().map(|_| ())
    }

    /// Head word per word (None for the root), checking the tree invariant.
    pub fn heads(&self) -> std::result::Result<Vec<Option<usize>>, String> {
        let n = self.words.len();
        if self.dep_edges.len() != n {
            return Err(format!("{} dependency edges for {n} words", self.dep_edges.len()));
        }
        let mut heads: Vec<Option<Option<usize>>> = vec![None; n];
        let mut root = None;
        for edge in &self.dep_edges {
            let d = edge.dependent;
            if d >= n {
                return Err(format!("dependent {d} out of range"));
            }
            if heads[d].is_some() {
                return Err(format!("word {d} has more than one head"));
            }
            let head = match edge.head {
                -1 => {
                    if root.replace(d).is_some() {
                        return Err("more than one root".into());
                    }
                    None
                }
                h if h >= 0 && (h as usize) < n && h as usize != d => Some(h as usize),
                h => return Err(format!("word {d} has invalid head {h}")),
            };
            heads[d] = Some(head);
        }
        let Some(root) = root else {
            return Err("no root".into());
        };
        if root != self.root_index {
            return Err(format!("root_index {} but root edge on {root}", self.root_index));
        }
        let heads: Vec<Option<usize>> = heads.into_iter().map(|h| h.flatten()).collect();
        // Every word must reach the root in at most n steps.
        for start in 0..n {
            let mut cur = start;
            let mut steps = 0;
            while let Some(h) = heads[cur] {
                cur = h;
                steps += 1;
                if steps > n {
                    return Err(format!("cycle through word {start}"));
                }
            }
        }
        Ok(heads)
    }

    /// Incoming relation label per word.
    pub fn relations(&self) -> Vec<&str> {
        let mut rels = vec![""; self.words.len()];
        for e in &self.dep_edges {
            if let Some(slot) = rels.get_mut(e.dependent) {
                *slot = &e.relation;
            }
        }
        rels
    }
}

/// Dense tag ↔ id table. Id 0 is reserved for unknown tags and padding.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(from = "Vec<String>", into = "Vec<String>")]
pub struct VocabTable {
    tags: Vec<String>,
    ids: HashMap<String, u32>,
}

pub const UNKNOWN_TAG: &str = "<unk>";

impl Default for VocabTable {
    fn default() -> Self {
        VocabTable {
            tags: vec![UNKNOWN_TAG.to_string()],
            ids: HashMap::new(),
        }
    }
}

impl From<Vec<String>> for VocabTable {
    fn from(tags: Vec<String>) -> Self {
        let mut table = VocabTable::default();
        for tag in tags.into_iter().skip(1) {
            table.insert(&tag);
        }
        table
    }
}

impl From<VocabTable> for Vec<String> {
    fn from(table: VocabTable) -> Self {
        table.tags
    }
}

impl VocabTable {
    pub fn insert(&mut self, tag: &str) -> u32 {
        if let Some(&id) = self.ids.get(tag) {
            return id;
        }
        let id = self.tags.len() as u32;
        self.tags.push(tag.to_string());
        self.ids.insert(tag.to_string(), id);
        id
    }

    pub fn id(&self, tag: &str) -> u32 {
        self.ids.get(tag).copied().unwrap_or(0)
    }

    pub fn tag(&self, id: u32) -> Option<&str> {
        self.tags.get(id as usize).map(String::as_str)
    }

    /// Size including the unknown entry.
    pub fn len(&self) -> usize {
        self.tags.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }
}

/// POS, dependency-relation and NER vocabularies built from the training split.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SyntaxVocabs {
    pub pos: VocabTable,
    pub dep: VocabTable,
    pub ner: VocabTable,
}

/// Tags are inserted in first-seen order, so ids are stable for a fixed input order.
pub fn build_vocabs<'a, I>(annotations: I) -> SyntaxVocabs
where
    I: IntoIterator<Item = &'a SyntaxAnnotation>,
{
    let mut vocabs = SyntaxVocabs::default();
    for ann in annotations {
        for tag in &ann.pos_tags {
            vocabs.pos.insert(tag);
        }
        for rel in ann.relations() {
            vocabs.dep.insert(rel);
        }
        for tag in &ann.ner_tags {
            vocabs.ner.insert(tag);
        }
    }
    vocabs
}

/// A source of syntactic annotations.
pub trait Annotator: Send + Sync {
    /// Cache key component; annotations from different versions never mix.
    fn version(&self) -> &str;

    fn annotate_raw(&self, text: &str) -> Result<SyntaxAnnotation>;

    /// Annotates and checks the result against the text and the tree invariant.
    fn annotate(&self, text: &str) -> Result<SyntaxAnnotation> {
        if text.is_empty() {
            return Err(AnnotateError::EmptyText);
        }
        let ann = self.annotate_raw(text)?;
        ann.validate(text).map_err(AnnotateError::Invalid)?;
        Ok(ann)
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct AnnotationStats {
    pub cache_hits: usize,
    pub annotated: usize,
    pub skipped: usize,
}

/// Annotates every sentence through the cache, fanning out over threads.
/// Sentences whose annotation is invalid are left out of the returned map
/// with a warning. Transport failures abort the whole batch.
pub fn annotate_all(
    sentences: &[RawSentence],
    annotator: &dyn Annotator,
    cache: &AnnotationCache,
) -> Result<(HashMap<String, SyntaxAnnotation>, AnnotationStats)> {
    enum Outcome {
        Hit(SyntaxAnnotation),
        Fresh(SyntaxAnnotation),
        Skipped,
    }
    let version = annotator.version();
    let outcomes: Vec<(String, Outcome)> = sentences
        .par_iter()
        .map(|s| {
            if let Some(ann) = cache.get(&s.id, version) {
                if ann.validate(&s.text).is_ok() {
                    return Ok((s.id.clone(), Outcome::Hit(ann)));
                }
            }
            match annotator.annotate(&s.text) {
                Ok(ann) => {
                    cache.put(&s.id, version, &s.text, &ann)?;
                    Ok((s.id.clone(), Outcome::Fresh(ann)))
                }
                Err(AnnotateError::Invalid(why)) | Err(AnnotateError::Backend(why)) => {
                    log::warn!("sentence {:?} skipped: {why}", s.id);
                    Ok((s.id.clone(), Outcome::Skipped))
                }
                Err(e) => Err(e),
            }
        })
        .collect::<Result<_>>()?;
    let mut stats = AnnotationStats::default();
    let mut out = HashMap::new();
    for (id, outcome) in outcomes {
        match outcome {
            Outcome::Hit(ann) => {
                stats.cache_hits += 1;
                out.insert(id, ann);
            }
            Outcome::Fresh(ann) => {
                stats.annotated += 1;
                out.insert(id, ann);
            }
            Outcome::Skipped => stats.skipped += 1,
        }
    }
    Ok((out, stats))
}

#[cfg(test)]
pub(crate) fn single_word(text: &str, pos: &str) -> SyntaxAnnotation {
    SyntaxAnnotation {
        words: vec![text.to_string()],
        word_spans: vec![(0, text.chars().count())],
        pos_tags: vec![pos.to_string()],
        ner_tags: vec!["O".to_string()],
        dep_edges: vec![DepEdge::new(-1, 0, "root")],
        root_index: 0,
    }
}
