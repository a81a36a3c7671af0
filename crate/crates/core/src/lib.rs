//! Named-entity extraction from OCR'd receipts with a prompted language model.
//!
//! The crate covers the data path end to end: loading annotated receipts,
//! simulating OCR noise for training data, building and parsing prompts,
//! character-level tagging for the encoder baseline, talking to a completion
//! server, and scoring predictions.

pub mod backend;
pub mod bio_codec;
pub mod corpus;
pub mod ocr_noise;
pub mod prompting;
pub mod scoring;

pub use corpus::{Answer, Corpus, CorpusError, NECategory, ReceiptRecord, Split, Truth};
pub use scoring::{Prediction, ScoreReport, ScoringConfig};
