//! Text normalisation, tokenisation, feature construction and the
//! example-preparation pipeline.

mod align;
mod embedding;
mod features;
mod filter;
mod normalize;
mod prepare;
mod tokenize;
pub mod vocab;

use thiserror::Error;

pub use align::{align_tags, parse_tag_blocks, read_tag_file, TagSequence, MAX_COVERAGE_GAP, UNMATCHED_TAG};
pub use embedding::{load_word_vectors, parse_word_vectors, EmbeddingMatrix, DEFAULT_WORD_DIM, MISSING_ROW_BOUND};
pub use features::make_binary_features;
pub use filter::{filter_outliers, FilterMode};
pub use normalize::{normalize_ascii, normalize_with_offsets};
pub use prepare::{
    prepare, prepare_with_report, PrepareOptions, PrepareReport, FALLBACK_NE_TAG, FALLBACK_POS_TAG,
};
pub use tokenize::{
    char_span_to_words, char_to_word, select_answer_sentence, tokenize, tokenize_words, SentenceSelection,
    TokenSpan,
};
pub use vocab::{build_vocab, Vocabularies, Vocabulary};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TextprepError {
    #[error("character index {index} is past the last token (text ends at {len})")]
    CharRange { index: usize, len: usize },
    #[error("answer tokens {first}..={last} do not fit a context of {len} tokens")]
    AnswerRange { first: usize, last: usize, len: usize },
    #[error("tag alignment leaves {:.1}% of characters uncovered in \"{sentence}\"", uncovered * 100.0)]
    Alignment { sentence: String, uncovered: f64 },
    #[error("{path}:{line}: {message}")]
    TagFile { path: String, line: usize, message: String },
    #[error("{path}:{line}: {message}")]
    WordVectors { path: String, line: usize, message: String },
    #[error("{path}: {message}")]
    Io { path: String, message: String },
    #[error("configuration error: {0}")]
    Config(String),
}
