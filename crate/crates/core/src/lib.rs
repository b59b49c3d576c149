//! Emotion-controlled dialog response generation with a per-input dynamic
//! vocabulary: a Bi-GRU/GRU attention seq2seq conditioned on a response
//! emotion, plus a predictor that picks which content words each input may
//! decode with.

pub mod error;
pub mod numerics;

pub use error::{Error, Result};
pub mod emotion;
pub mod text;
pub mod dynvocab;
pub mod encdec;
pub mod model;
pub mod training;
pub mod metrics;
pub mod pipeline;
pub mod synth;
