//! Open-vocabulary keyword spotting with hyper-generated matched filters.
//!
//! A character-level LSTM hypernetwork turns a keyword string into the
//! weights of a depthwise convolution. That keyword-specific filter runs over
//! encoded speech and guides the cross-attention of a small Perceiver
//! detector, which emits the probability that the keyword was spoken.
//!
//! Pipeline: WAV → log-mel frames → speech encoder (Conformer-lite or
//! imported features) → project + matched-filter conv → Perceiver latents →
//! detection probability. Training is end-to-end BCE over positive/negative
//! keyword pairs; the filter weights can be generated offline and shipped to
//! a device without the hypernetwork.

pub mod cli;
pub mod dataset;
pub mod detector;
pub mod encoder;
pub mod error;
pub mod frontend;
pub mod hypernet;
pub mod nn;
pub mod metrics;
pub mod numerics;
pub mod trainer;

pub use error::{Error, Result};
