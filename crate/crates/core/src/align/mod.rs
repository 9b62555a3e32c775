//! Encoder tokenization, word→token tag alignment, BIOE label encoding, and
//! the preprocessed dataset format consumed by training.

mod dataset;
mod features;
mod labels;
mod tokenizer;

use thiserror::Error;

pub use dataset::{
    preprocess_sentence, preprocess_split, read_records, write_records, DatasetMeta,
    PreprocessReport, PreprocessedRecord, SplitSummary, META_FILE,
};
pub use features::{align_tags, AlignedFeatures};
pub use labels::{
    decode_labels, encode_labels, gold_spans, ClassSpan, EncodeReport, LabelScheme, LabelSequence,
    Subtask, Tag,
};
pub use tokenizer::{is_cjk, TokenSequence, Tokenizer, WordPieceVocab, CLS, PAD, SEP, UNK};

#[derive(Debug, Error)]
pub enum AlignError {
    #[error("cannot tokenize empty text")]
    EmptyText,
    #[error("vocabulary: {0}")]
    Vocab(String),
    #[error("annotation does not form a valid tree: {0}")]
    Annotation(String),
    #[error("{path}: {what}")]
    Dataset { path: String, what: String },
}

pub type Result<T> = std::result::Result<T, AlignError>;
