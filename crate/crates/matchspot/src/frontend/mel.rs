use std::io::Write;
use std::path::Path;
use std::sync::Arc;

use rustfft::{num_complex::Complex, Fft, FftPlanner};

use super::{AudioClip, FMAX_HZ, FMIN_HZ, HOP_LENGTH, LOG_FLOOR, N_FFT, N_MELS, WIN_LENGTH};
use crate::error::{Error, Result};

/// T×80 log-mel frame matrix, row-major, 10 ms hop / 25 ms window.
#[derive(Debug, Clone)]
pub struct MelSpectrogram {
    pub frames: Vec<f32>,
    pub n_frames: usize,
    pub n_mels: usize,
}

impl MelSpectrogram {
    pub fn frame(&self, t: usize) -> &[f32] {
        &self.frames[t * self.n_mels..(t + 1) * self.n_mels]
    }
}

/// Number of frames produced for a clip of `n_samples` (valid framing, no
/// center padding): 1 + floor((n − 400) / 160).
pub fn frame_count(n_samples: usize) -> usize {
    if n_samples < WIN_LENGTH {
        0
    } else {
        1 + (n_samples - WIN_LENGTH) / HOP_LENGTH
    }
}

// Slaney mel scale (the librosa/auditory-toolbox default): linear below
// 1 kHz at 200/3 Hz per mel, logarithmic above with a factor 6.4 per 27 mels.
const MEL_BREAK_HZ: f64 = 1000.0;
const MEL_F_SP: f64 = 200.0 / 3.0;

fn mel_logstep() -> f64 {
    (6.4f64).ln() / 27.0
}

fn hz_to_mel(hz: f64) -> f64 {
    if hz < MEL_BREAK_HZ {
        hz / MEL_F_SP
    } else {
        MEL_BREAK_HZ / MEL_F_SP + (hz / MEL_BREAK_HZ).ln() / mel_logstep()
    }
}

fn mel_to_hz(mel: f64) -> f64 {
    let break_mel = MEL_BREAK_HZ / MEL_F_SP;
    if mel < break_mel {
        mel * MEL_F_SP
    } else {
        MEL_BREAK_HZ * ((mel - break_mel) * mel_logstep()).exp()
    }
}

/// Center frequencies of the 80 triangular filters (the filterbank
/// construction oracle used by tests).
pub fn mel_center_frequencies() -> Vec<f64> {
    let mel_min = hz_to_mel(FMIN_HZ);
    let mel_max = hz_to_mel(FMAX_HZ);
    (1..=N_MELS)
        .map(|i| mel_to_hz(mel_min + (mel_max - mel_min) * i as f64 / (N_MELS + 1) as f64))
        .collect()
}

/// Log-mel feature extractor: Hann window, 512-point FFT, 80 equal-area
/// triangular mel filters over 0–8000 Hz, natural log with a 1e-10 floor.
pub struct MelExtractor {
    fft: Arc<dyn Fft<f32>>,
    window: Vec<f32>,
    /// N_MELS x (N_FFT/2 + 1), row-major
    filters: Vec<f32>,
}

impl Default for MelExtractor {
    fn default() -> Self {
        Self::new()
    }
}

impl MelExtractor {
    pub fn new() -> Self {
        let mut planner = FftPlanner::new();
        let fft = planner.plan_fft_forward(N_FFT);
        let window = (0..WIN_LENGTH)
            .map(|n| {
                let x = 2.0 * std::f64::consts::PI * n as f64 / WIN_LENGTH as f64;
                (0.5 * (1.0 - x.cos())) as f32
            })
            .collect();
        MelExtractor {
            fft,
            window,
            filters: build_filterbank(),
        }
    }

    pub fn extract(&self, clip: &AudioClip) -> Result<MelSpectrogram> {
        let n = clip.samples.len();
        if n < WIN_LENGTH {
            return Err(Error::Input(format!(
                "clip too short for mel analysis: {n} samples < window {WIN_LENGTH}"
            )));
        }
        let n_frames = frame_count(n);
        let n_bins = N_FFT / 2 + 1;
        let mut frames = vec![0.0f32; n_frames * N_MELS];
        let mut buf = vec![Complex::new(0.0f32, 0.0f32); N_FFT];
        let mut magnitude = vec![0.0f32; n_bins];
        for t in 0..n_frames {
            let start = t * HOP_LENGTH;
            for i in 0..N_FFT {
                buf[i] = if i < WIN_LENGTH {
                    Complex::new(clip.samples[start + i] * self.window[i], 0.0)
                } else {
                    Complex::new(0.0, 0.0)
                };
            }
            self.fft.process(&mut buf);
            for (i, m) in magnitude.iter_mut().enumerate() {
                *m = buf[i].norm();
            }
            for mel in 0..N_MELS {
                let row = &self.filters[mel * n_bins..(mel + 1) * n_bins];
                let mut energy = 0.0f64;
                for (w, m) in row.iter().zip(&magnitude) {
                    energy += (*w as f64) * (*m as f64);
                }
                frames[t * N_MELS + mel] = energy.max(LOG_FLOOR).ln() as f32;
            }
        }
        Ok(MelSpectrogram {
            frames,
            n_frames,
            n_mels: N_MELS,
        })
    }
}

/// Triangular filters evaluated at exact bin frequencies, equal-area
/// normalized (each filter scaled by 2 / bandwidth).
fn build_filterbank() -> Vec<f32> {
    let n_bins = N_FFT / 2 + 1;
    let mel_min = hz_to_mel(FMIN_HZ);
    let mel_max = hz_to_mel(FMAX_HZ);
    let edges: Vec<f64> = (0..N_MELS + 2)
        .map(|i| mel_to_hz(mel_min + (mel_max - mel_min) * i as f64 / (N_MELS + 1) as f64))
        .collect();
    let bin_hz: Vec<f64> = (0..n_bins)
        .map(|i| i as f64 * super::SAMPLE_RATE as f64 / N_FFT as f64)
        .collect();
    let mut filters = vec![0.0f32; N_MELS * n_bins];
    for m in 0..N_MELS {
        let (lo, center, hi) = (edges[m], edges[m + 1], edges[m + 2]);
        let norm = 2.0 / (hi - lo);
        for (i, &f) in bin_hz.iter().enumerate() {
            let w = if f <= lo || f >= hi {
                0.0
            } else if f <= center {
                (f - lo) / (center - lo)
            } else {
                (hi - f) / (hi - center)
            };
            filters[m * n_bins + i] = (w * norm) as f32;
        }
    }
    filters
}

/// Debug export: one frame per row, 80 columns.
pub fn write_mel_csv(path: &Path, mel: &MelSpectrogram) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = std::io::BufWriter::new(file);
    for t in 0..mel.n_frames {
        let row: Vec<String> = mel.frame(t).iter().map(|v| format!("{v:.8e}")).collect();
        writeln!(w, "{}", row.join(",")).map_err(|e| Error::io(path, e))?;
    }
    Ok(())
}
