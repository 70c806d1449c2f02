//! Audio ingestion, 80-channel log-mel features, and SNR-controlled noise
//! mixing for augmentation and the noise-robustness harness.

mod mel;
mod noise;
mod wav;

pub use mel::{mel_center_frequencies, write_mel_csv, MelExtractor, MelSpectrogram};
pub use noise::{gen_noise, mix_noise, power, snr_db_between, NoiseKind};
pub use wav::{load_wav, write_wav};

/// All ingestion is pinned to 16 kHz mono PCM16.
pub const SAMPLE_RATE: u32 = 16_000;
/// 25 ms analysis window.
pub const WIN_LENGTH: usize = 400;
/// 10 ms hop.
pub const HOP_LENGTH: usize = 160;
pub const N_FFT: usize = 512;
pub const N_MELS: usize = 80;
pub const FMIN_HZ: f64 = 0.0;
pub const FMAX_HZ: f64 = 8000.0;
/// Energies are floored here before the log so silence stays finite.
pub const LOG_FLOOR: f64 = 1e-10;

/// Mono audio in [−1, 1] at 16 kHz.
#[derive(Debug, Clone)]
pub struct AudioClip {
    pub samples: Vec<f32>,
    pub sample_rate: u32,
}

impl AudioClip {
    pub fn from_samples(samples: Vec<f32>) -> Self {
        AudioClip {
            samples,
            sample_rate: SAMPLE_RATE,
        }
    }

    pub fn duration_s(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }

    /// Sub-clip by sample range, clamped to the clip.
    pub fn slice(&self, start: usize, len: usize) -> AudioClip {
        let end = (start + len).min(self.samples.len());
        let start = start.min(end);
        AudioClip {
            samples: self.samples[start..end].to_vec(),
            sample_rate: self.sample_rate,
        }
    }
}

/// Convenience wrapper over a shared extractor instance.
pub fn log_mel(clip: &AudioClip) -> crate::Result<MelSpectrogram> {
    MelExtractor::new().extract(clip)
}
