//! Chinese event extraction from fused semantic and syntactic channels.
//!
//! The pipeline: load DuEE records ([`corpus`]), annotate them with an
//! external syntactic annotator ([`annotate`]), align word-level tags and
//! BIOE labels to encoder tokens ([`align`]), build token-level dependency
//! graphs ([`graph`]), train per-subtask taggers ([`model`]), and score
//! predictions at the token level ([`eval`]).

pub mod align;
pub mod annotate;
pub mod corpus;
pub mod eval;
pub mod graph;
pub mod model;
pub mod fixture;
pub mod cli;
