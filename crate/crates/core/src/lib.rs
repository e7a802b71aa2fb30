//! Constituent parsing as sequence tagging.
//!
//! Trees are linearized into one label per token ([`encodings`]), a
//! multi-task tagger learns to predict the label components ([`tagger`]),
//! optionally fine-tuned against bracketing F1 with policy gradient
//! ([`pg`]), and predictions are decoded back into trees and scored
//! ([`metrics`]).

pub mod auxlabels;
pub mod encodings;
pub mod exec;
pub mod metrics;
pub mod pg;
pub mod seqfile;
pub mod synth;
pub mod tagger;
pub mod treebank;

pub use encodings::{
    decode, encode, encode_absolute, encode_dynamic, encode_relative, EncodedSentence, NComponent,
    Scheme, TagLabel,
};
pub use exec::Execution;
pub use treebank::{parse_bracketed, serialize, Sentence, Tree};
