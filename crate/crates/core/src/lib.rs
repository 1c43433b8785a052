//! Neural question generation from passages and answer spans.
//!
//! The crate covers the full flow: relocating answers in machine-translated
//! SQuAD-style data ([`repair`]), tokenisation and feature annotation
//! ([`textprep`], [`corpus`]), BiGRU/BiLSTM/Transformer encoder-decoders with
//! optional copy and coverage mechanisms on a small reverse-mode tape
//! ([`tensor`], [`models`]), training with checkpoints ([`train`]), greedy and
//! beam decoding ([`decode`]) and BLEU/ROUGE-L scoring ([`metrics`]).
//! [`cli`] wires the stages into the `qgen` binary; [`synthetic`] generates
//! corpora for experiments and tests.

pub mod cli;
pub mod corpus;
pub mod decode;
pub mod metrics;
pub mod models;
pub mod repair;
pub mod synthetic;
pub mod tensor;
pub mod textprep;
pub mod train;
