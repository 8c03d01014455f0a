//! Visual speech recognition toolkit.
//!
//! The crate covers mouth-ROI preprocessing, a small hybrid CTC/attention encoder-decoder
//! trained with a tape-based autodiff, label-synchronous joint beam search with n-gram
//! shallow fusion, and corpus-level evaluation and error analysis.

pub mod config;
pub mod ctc;
pub mod decode;
pub mod error;
pub mod eval;
pub mod lm;
pub mod manifest;
pub mod math;
pub mod nn;
pub mod roi;
pub mod synth;
pub mod tokenizer;

pub use error::{Error, Result};
