//! Dialect density estimation for short speech utterances.
//!
//! The crate turns per-utterance side data (ASR transcripts, frame posteriors,
//! audio, ingested speaker and paralinguistic embeddings) into six feature
//! families, fits one gradient-boosted regression ensemble per family plus a
//! combined one, and explains predictions with exact tree Shapley values.
//!
//! Module map:
//!
//! - [`corpus`]: manifests, WAV ingestion, dialect-density arithmetic, weak-label
//!   pool filtering and speaker-independent splits.
//! - [`asr_features`]: character-bigram counts and CTC-style per-character durations.
//! - [`char_lm`]: character n-gram LM, word vocabulary and the five surprisal features.
//! - [`prosody`]: F0 and band-energy contours.
//! - [`projector`]: small FC / 1-D CNN city classifiers trained with SGD.
//! - [`gbt`]: second-order boosted regression trees and TreeSHAP.
//! - [`pipeline`]: feature-set assembly, training of the seven models, prediction.
//! - [`eval`]: Pearson correlation reports, random hold-out, SHAP summaries.
//! - [`commands`]: the subcommands behind the `ddm` binary.
//! - [`synth`]: deterministic synthetic corpus generator.

pub mod asr_features;
pub mod char_lm;
pub mod commands;
pub mod corpus;
pub mod error;
pub mod eval;
pub mod gbt;
pub mod pipeline;
pub mod projector;
pub mod prosody;
pub mod seed;
pub mod synth;

pub use error::{Error, Result};
