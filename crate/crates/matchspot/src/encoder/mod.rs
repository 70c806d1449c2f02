//! Speech encoder: maps log-mel frames to the representation sequence the
//! detector consumes. Ships a Conformer-lite implementation (strided-conv
//! subsampling, macaron blocks with self-attention and a depthwise conv
//! module) plus CTC loss for its pretraining. Externally computed feature
//! matrices can be imported instead via the HSFEAT01 format, so a pretrained
//! encoder can be dropped in without this implementation.

mod conformer;
mod ctc;
mod features;
mod pretrain;

pub use conformer::{ConformerBlock, ConformerEncoder};
pub use ctc::{ctc_loss, ctc_loss_by_enumeration, greedy_decode};
pub use features::{read_features, write_features};
pub use pretrain::{pretrain_ctc, CtcTrainConfig};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{Real, Tensor};

/// Encoder output: B×M representation sequence plus its time resolution.
#[derive(Debug)]
pub struct EncodedSpeech<T: Real> {
    pub vectors: Tensor<T>,
    pub frame_period_ms: f64,
}

impl<T: Real> EncodedSpeech<T> {
    pub fn len(&self) -> usize {
        self.vectors.shape()[0]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dim(&self) -> usize {
        self.vectors.shape()[1]
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq, Eq)]
#[serde(deny_unknown_fields)]
pub struct EncoderConfig {
    pub n_layers: usize,
    pub n_heads: usize,
    pub model_dim: usize,
    pub conv_kernel: usize,
    pub subsample_factor: usize,
    pub ff_expansion: usize,
}

impl EncoderConfig {
    /// Published tiny-Conformer shape: 6 layers, 4 heads, kernel 3, M = 144,
    /// 40 ms output resolution.
    pub fn paper() -> Self {
        EncoderConfig {
            n_layers: 6,
            n_heads: 4,
            model_dim: 144,
            conv_kernel: 3,
            subsample_factor: 4,
            ff_expansion: 4,
        }
    }

    /// Desk-scale shape for single-core runs.
    pub fn desk() -> Self {
        EncoderConfig {
            n_layers: 2,
            n_heads: 4,
            model_dim: 32,
            conv_kernel: 3,
            subsample_factor: 4,
            ff_expansion: 4,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.model_dim == 0 || self.n_layers == 0 {
            return Err(Error::Config("encoder dims must be positive".to_string()));
        }
        if self.model_dim % self.n_heads != 0 {
            return Err(Error::Config(format!(
                "model_dim {} not divisible by n_heads {}",
                self.model_dim, self.n_heads
            )));
        }
        if !matches!(self.subsample_factor, 2 | 4) {
            return Err(Error::Config(format!(
                "subsample_factor must be 2 or 4, got {}",
                self.subsample_factor
            )));
        }
        if self.conv_kernel == 0 || self.ff_expansion == 0 {
            return Err(Error::Config("conv_kernel/ff_expansion must be positive".to_string()));
        }
        Ok(())
    }

    /// Output frames for T input frames: ceil per stride-2 stage.
    pub fn output_len(&self, t: usize) -> usize {
        match self.subsample_factor {
            2 => t.div_ceil(2),
            _ => t.div_ceil(2).div_ceil(2),
        }
    }

    pub fn frame_period_ms(&self) -> f64 {
        10.0 * self.subsample_factor as f64
    }
}
