//! Solidity preprocessing: normalization, lexing, vocabularies and
//! fixed-length id encoding.

mod lexer;
mod normalize;
mod vocab;
mod wordpiece;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use lexer::{tokenize, tokenize_sequence, TokenSequence};
pub use normalize::{normalize_source, NormalizeIssue, NormalizeWarning, Normalized};
pub use vocab::{
    build_vocab, encode_sequence, Vocab, DEFAULT_MAX_LEN, DEFAULT_MAX_SIZE, DEFAULT_MIN_FREQ, PAD_ID, PAD_TOKEN,
    UNK_ID, UNK_TOKEN,
};
pub use wordpiece::WordPieceTokenizer;

#[derive(Debug, Error)]
pub enum PreprocessError {
    #[error("invalid vocabulary: {0}")]
    VocabFormat(String),
}

/// Fixed-length id sequence; positions at or beyond `true_length` hold the
/// padding id.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct EncodedSequence {
    pub ids: Vec<u32>,
    pub true_length: usize,
}

impl EncodedSequence {
    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn tokens(&self) -> &[u32] {
        &self.ids[..self.true_length]
    }
}

/// Normalize then lex one contract.
pub fn lex_contract(source: &str, origin: &str) -> (TokenSequence, Vec<NormalizeWarning>) {
    let normalized = normalize_source(source);
    (tokenize_sequence(&normalized.text, origin), normalized.warnings)
}
