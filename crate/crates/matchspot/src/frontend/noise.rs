use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::AudioClip;
use crate::error::{Error, Result};
use crate::numerics::sample_standard_normal;

/// Mean square power of a sample buffer (f64 accumulation).
pub fn power(samples: &[f32]) -> f64 {
    if samples.is_empty() {
        return 0.0;
    }
    samples.iter().map(|&s| (s as f64) * (s as f64)).sum::<f64>() / samples.len() as f64
}

/// 10·log10(P_signal / P_noise).
pub fn snr_db_between(signal: &[f32], noise: &[f32]) -> f64 {
    10.0 * (power(signal) / power(noise)).log10()
}

/// Mix noise into a clean clip at an exact signal-to-noise ratio.
///
/// The noise is cropped (or cyclically tiled) to the clean length with the
/// offset drawn from the seeded rng, rescaled so the measured SNR equals
/// `snr_db`, then added. If the sum leaves [−1, 1] the mix is peak-normalized.
/// `snr_db = +inf` is the no-noise sentinel and returns the clean clip.
pub fn mix_noise(clean: &AudioClip, noise: &AudioClip, snr_db: f64, seed: u64) -> Result<AudioClip> {
    if snr_db.is_infinite() && snr_db > 0.0 {
        return Ok(clean.clone());
    }
    let n = clean.samples.len();
    if n == 0 {
        return Err(Error::Input("empty clean clip".to_string()));
    }
    if noise.samples.is_empty() {
        return Err(Error::Input("empty noise clip".to_string()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let offset = rng.gen_range(0..noise.samples.len());
    let segment: Vec<f32> = (0..n)
        .map(|i| noise.samples[(offset + i) % noise.samples.len()])
        .collect();
    let p_signal = power(&clean.samples);
    let p_noise = power(&segment);
    if p_signal == 0.0 {
        return Err(Error::Input("zero-power clean clip".to_string()));
    }
    if p_noise == 0.0 {
        return Err(Error::Input("zero-power noise segment".to_string()));
    }
    // 10·log10(p_signal / (scale²·p_noise)) == snr_db
    let scale = (p_signal / (p_noise * 10f64.powf(snr_db / 10.0))).sqrt();
    let mut out: Vec<f32> = clean
        .samples
        .iter()
        .zip(&segment)
        .map(|(&c, &nz)| c + (nz as f64 * scale) as f32)
        .collect();
    let peak = out.iter().fold(0.0f32, |m, &v| m.max(v.abs()));
    if peak > 1.0 {
        for v in out.iter_mut() {
            *v /= peak;
        }
    }
    Ok(AudioClip {
        samples: out,
        sample_rate: clean.sample_rate,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NoiseKind {
    White,
    /// Babble surrogate: sum of shifted, attenuated copies of supplied speech
    /// clips. Stands in for external pub-noise recordings; real noise WAVs
    /// can be supplied to `mix_noise` directly instead.
    PubLike,
}

/// Generate a noise clip. White noise needs no sources; the pub-like babble
/// surrogate sums 8 shifted copies of the given speech clips.
pub fn gen_noise(
    kind: NoiseKind,
    duration_samples: usize,
    sources: &[AudioClip],
    seed: u64,
) -> Result<AudioClip> {
    if duration_samples == 0 {
        return Err(Error::Input("noise duration must be positive".to_string()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    match kind {
        NoiseKind::White => {
            let samples = (0..duration_samples)
                .map(|_| (sample_standard_normal(&mut rng) * 0.2).clamp(-1.0, 1.0) as f32)
                .collect();
            Ok(AudioClip::from_samples(samples))
        }
        NoiseKind::PubLike => {
            let usable: Vec<&AudioClip> =
                sources.iter().filter(|c| !c.samples.is_empty()).collect();
            if usable.is_empty() {
                return Err(Error::Input(
                    "pub-like noise needs at least one non-empty source clip".to_string(),
                ));
            }
            let mut acc = vec![0.0f64; duration_samples];
            for _ in 0..8 {
                let src = usable[rng.gen_range(0..usable.len())];
                let offset = rng.gen_range(0..src.samples.len());
                let gain = 0.3 + 0.4 * rng.gen::<f64>();
                for (i, a) in acc.iter_mut().enumerate() {
                    *a += src.samples[(offset + i) % src.samples.len()] as f64 * gain / 8.0;
                }
            }
            let peak = acc.iter().fold(0.0f64, |m, &v| m.max(v.abs()));
            if peak == 0.0 {
                return Err(Error::Input("pub-like sources are all silent".to_string()));
            }
            let samples = acc.iter().map(|&v| (v / peak * 0.5) as f32).collect();
            Ok(AudioClip::from_samples(samples))
        }
    }
}
