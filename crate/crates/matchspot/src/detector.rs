//! Detection network: project encoded speech, run the keyword-specific
//! depthwise convolution as a matched filter, cross-attend a small learned
//! latent array to the filtered sequence (Perceiver style), and emit one
//! detection probability. Cross-attention maps are captured per layer for
//! inspection and export.

use std::io::Write;
use std::path::{Path, PathBuf};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::encoder::EncodedSpeech;
use crate::error::{Error, Result};
use crate::nn::{gelu, sinusoidal_positions, FeedForward, Activation, LayerNorm, Linear, MultiHeadAttention, ParamSet};
use crate::numerics::{Real, Tensor};

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq, Eq)]
#[serde(deny_unknown_fields)]
pub struct PerceiverConfig {
    /// Latent array length S.
    pub latent_size: usize,
    /// Projection width N; must equal the keyword filter's channel count.
    pub proj_dim: usize,
    /// Perceiver layers L (cross-attention + latent transformer each).
    pub n_layers: usize,
    pub n_heads: usize,
    /// Hidden width of the latent feed-forward block.
    pub ff_hidden: usize,
    /// Sinusoidal positions on the projected sequence. Disabled only by the
    /// permutation sanity checks.
    pub use_positions: bool,
}

impl PerceiverConfig {
    /// Published shape: 16 latents over a 64-wide projection. The
    /// feed-forward width is not stated in print; 3232 reproduces the
    /// published per-layer parameter growth of roughly 0.45M.
    pub fn paper(n_layers: usize) -> Self {
        PerceiverConfig {
            latent_size: 16,
            proj_dim: 64,
            n_layers,
            n_heads: 4,
            ff_hidden: 3232,
            use_positions: true,
        }
    }

    pub fn desk() -> Self {
        PerceiverConfig {
            latent_size: 8,
            proj_dim: 16,
            n_layers: 2,
            n_heads: 4,
            ff_hidden: 32,
            use_positions: true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(1..=5).contains(&self.n_layers) {
            return Err(Error::Config(format!(
                "n_perceiver_layers must be in [1,5], got {}",
                self.n_layers
            )));
        }
        if self.latent_size == 0 || self.ff_hidden == 0 {
            return Err(Error::Config("latent_size/ff_hidden must be positive".to_string()));
        }
        if self.proj_dim % self.n_heads != 0 {
            return Err(Error::Config(format!(
                "proj_dim {} not divisible by n_heads {}",
                self.proj_dim, self.n_heads
            )));
        }
        Ok(())
    }
}

/// Head-averaged cross-attention of one layer: latents x frames, rows sum
/// to one.
#[derive(Debug, Clone)]
pub struct AttentionMap {
    pub latents: usize,
    pub frames: usize,
    pub weights: Vec<f64>,
}

impl AttentionMap {
    fn from_tensor<T: Real>(t: &Tensor<T>) -> Self {
        let (latents, frames) = t.dims2();
        AttentionMap {
            latents,
            frames,
            weights: t.to_vec().iter().map(|v| Real::to_f64(*v)).collect(),
        }
    }

    pub fn row(&self, s: usize) -> &[f64] {
        &self.weights[s * self.frames..(s + 1) * self.frames]
    }

    /// Column sums over latents: the per-frame attention mass used for
    /// localization readouts.
    pub fn frame_mass(&self) -> Vec<f64> {
        let mut mass = vec![0.0; self.frames];
        for s in 0..self.latents {
            for (t, m) in mass.iter_mut().enumerate() {
                *m += self.weights[s * self.frames + t];
            }
        }
        mass
    }
}

#[derive(Debug)]
pub struct DetectionOutput {
    pub probability: f64,
    pub cross_attention: Vec<AttentionMap>,
}

struct PerceiverLayer<T: Real> {
    cross_q_norm: LayerNorm<T>,
    cross_kv_norm: LayerNorm<T>,
    cross: MultiHeadAttention<T>,
    self_norm: LayerNorm<T>,
    self_attn: MultiHeadAttention<T>,
    ff_norm: LayerNorm<T>,
    ff: FeedForward<T>,
}

impl<T: Real> PerceiverLayer<T> {
    fn new<R: Rng>(config: &PerceiverConfig, rng: &mut R) -> Result<Self> {
        let n = config.proj_dim;
        Ok(PerceiverLayer {
            cross_q_norm: LayerNorm::new(n),
            cross_kv_norm: LayerNorm::new(n),
            cross: MultiHeadAttention::new(n, config.n_heads, rng)?,
            self_norm: LayerNorm::new(n),
            self_attn: MultiHeadAttention::new(n, config.n_heads, rng)?,
            ff_norm: LayerNorm::new(n),
            ff: FeedForward::new(n, config.ff_hidden, Activation::Gelu, rng),
        })
    }

    fn forward(&self, latents: &Tensor<T>, filtered: &Tensor<T>) -> Result<(Tensor<T>, Tensor<T>)> {
        let (cross_out, attn) = self
            .cross
            .forward(&self.cross_q_norm.forward(latents)?, &self.cross_kv_norm.forward(filtered)?)?;
        let x = latents.add(&cross_out)?;
        let normed = self.self_norm.forward(&x)?;
        let (self_out, _) = self.self_attn.forward(&normed, &normed)?;
        let x = x.add(&self_out)?;
        let x = x.add(&self.ff.forward(&self.ff_norm.forward(&x)?)?)?;
        Ok((x, attn))
    }

    fn collect(&self, prefix: &str, params: &mut ParamSet<T>) {
        self.cross_q_norm.collect(&format!("{prefix}.cross_q_norm"), params);
        self.cross_kv_norm.collect(&format!("{prefix}.cross_kv_norm"), params);
        self.cross.collect(&format!("{prefix}.cross"), params);
        self.self_norm.collect(&format!("{prefix}.self_norm"), params);
        self.self_attn.collect(&format!("{prefix}.self_attn"), params);
        self.ff_norm.collect(&format!("{prefix}.ff_norm"), params);
        self.ff.collect(&format!("{prefix}.ff"), params);
    }
}

pub struct Detector<T: Real> {
    proj: Linear<T>,
    latents: Tensor<T>,
    layers: Vec<PerceiverLayer<T>>,
    head: Linear<T>,
    config: PerceiverConfig,
    encoder_dim: usize,
}

impl<T: Real> Detector<T> {
    pub fn init<R: Rng>(config: &PerceiverConfig, encoder_dim: usize, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let proj = Linear::new(encoder_dim, config.proj_dim, rng);
        let latents =
            Tensor::randn_truncated(vec![config.latent_size, config.proj_dim], 0.02, rng).as_param();
        let layers = (0..config.n_layers)
            .map(|_| PerceiverLayer::new(config, rng))
            .collect::<Result<Vec<_>>>()?;
        let head = Linear::new(config.proj_dim, 1, rng);
        Ok(Detector {
            proj,
            latents,
            layers,
            head,
            config: config.clone(),
            encoder_dim,
        })
    }

    pub fn config(&self) -> &PerceiverConfig {
        &self.config
    }

    pub fn encoder_dim(&self) -> usize {
        self.encoder_dim
    }

    /// Tape-connected forward pass. Returns the probability (a [1] tensor)
    /// and the per-layer head-averaged cross-attention maps.
    pub fn forward(&self, z: &Tensor<T>, filter: &Tensor<T>) -> Result<(Tensor<T>, Vec<Tensor<T>>)> {
        if z.shape().len() != 2 || z.shape()[1] != self.encoder_dim {
            return Err(Error::shape(
                "detect",
                format!("encoded speech must be [B, {}], got {:?}", self.encoder_dim, z.shape()),
            ));
        }
        let n = self.config.proj_dim;
        if filter.shape().len() != 2 || filter.shape()[0] != n {
            return Err(Error::shape(
                "detect",
                format!(
                    "filter channels must equal proj_dim {n}, got {:?} (config/filter mismatch)",
                    filter.shape()
                ),
            ));
        }
        // stage 1: project and position
        let mut projected = self.proj.forward(z)?;
        if self.config.use_positions {
            let b = projected.shape()[0];
            projected = projected.add(&sinusoidal_positions(b, n))?;
        }
        // stage 2: keyword-specific matched filter along time, then GELU
        let filtered = gelu(
            &projected
                .transpose()?
                .depthwise_conv1d(filter, 1)?
                .transpose()?,
        )?;
        // stage 3: latent bottleneck; every layer attends to the same
        // filtered sequence
        let mut latents = self.latents.clone();
        let mut maps = Vec::with_capacity(self.layers.len());
        for layer in &self.layers {
            let (next, attn) = layer.forward(&latents, &filtered)?;
            latents = next;
            maps.push(attn);
        }
        // stage 4: pool latents, single linear head, sigmoid
        let pooled = latents
            .sum_axis0()?
            .mul_scalar(T::from_f64(1.0 / self.config.latent_size as f64));
        let logit = self.head.forward(&pooled)?;
        let prob = logit.sigmoid().reshape(vec![1])?;
        Ok((prob, maps))
    }

    /// Inference wrapper producing the plain detection output.
    pub fn detect(&self, z: &EncodedSpeech<T>, filter: &Tensor<T>) -> Result<DetectionOutput> {
        let (prob, maps) = self.forward(&z.vectors, filter)?;
        Ok(DetectionOutput {
            probability: Real::to_f64(prob.value()),
            cross_attention: maps.iter().map(AttentionMap::from_tensor).collect(),
        })
    }

    pub fn collect(&self, prefix: &str, params: &mut ParamSet<T>) {
        self.proj.collect(&format!("{prefix}.proj"), params);
        params.push(format!("{prefix}.latents"), self.latents.clone());
        for (i, layer) in self.layers.iter().enumerate() {
            layer.collect(&format!("{prefix}.layers.{i}"), params);
        }
        self.head.collect(&format!("{prefix}.head"), params);
    }
}

/// Exact trainable parameter count (excludes the keyword filter, which
/// arrives from the hypernetwork).
pub fn count_detector_params(config: &PerceiverConfig, encoder_dim: usize) -> Result<usize> {
    config.validate()?;
    let n = config.proj_dim;
    let per_layer = 4 * (2 * n) // four layernorms
        + 2 * MultiHeadAttention::<f32>::param_count(n)
        + FeedForward::<f32>::param_count(n, config.ff_hidden);
    let total = Linear::<f32>::param_count(encoder_dim, n)
        + config.latent_size * n
        + config.n_layers * per_layer
        + Linear::<f32>::param_count(n, 1);
    Ok(total)
}

/// Write one layer's cross-attention as CSV (rows = latent index, columns =
/// time frames) and as an 8-bit binary PGM heatmap (min-max scaled; a
/// constant map renders mid-gray). Writes `<base>.csv` and `<base>.pgm`.
pub fn export_attention(out: &DetectionOutput, layer: usize, base: &Path) -> Result<(PathBuf, PathBuf)> {
    let Some(map) = out.cross_attention.get(layer) else {
        return Err(Error::Input(format!(
            "layer {layer} out of range: detector has {} layers",
            out.cross_attention.len()
        )));
    };
    let csv_path = base.with_extension("csv");
    let pgm_path = base.with_extension("pgm");
    let mut csv = std::io::BufWriter::new(
        std::fs::File::create(&csv_path).map_err(|e| Error::io(&csv_path, e))?,
    );
    for s in 0..map.latents {
        let row: Vec<String> = map.row(s).iter().map(|v| format!("{v:.8e}")).collect();
        writeln!(csv, "{}", row.join(",")).map_err(|e| Error::io(&csv_path, e))?;
    }
    drop(csv);

    let lo = map.weights.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = map.weights.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let scale = |v: f64| -> u8 {
        if hi > lo {
            (((v - lo) / (hi - lo)) * 255.0).round().clamp(0.0, 255.0) as u8
        } else {
            128
        }
    };
    let mut pgm = Vec::with_capacity(32 + map.weights.len());
    pgm.extend_from_slice(format!("P5\n{} {}\n255\n", map.frames, map.latents).as_bytes());
    pgm.extend(map.weights.iter().map(|&v| scale(v)));
    std::fs::write(&pgm_path, &pgm).map_err(|e| Error::io(&pgm_path, e))?;
    Ok((csv_path, pgm_path))
}

/// Parse an attention CSV back into a map (round-trip/debug support).
pub fn read_attention_csv(path: &Path) -> Result<AttentionMap> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut weights = Vec::new();
    let mut frames = 0usize;
    let mut latents = 0usize;
    for line in text.lines() {
        if line.trim().is_empty() {
            continue;
        }
        let row: Vec<f64> = line
            .split(',')
            .map(|v| v.trim().parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| Error::format(path, e.to_string()))?;
        if frames == 0 {
            frames = row.len();
        } else if frames != row.len() {
            return Err(Error::format(path, "ragged attention CSV"));
        }
        weights.extend(row);
        latents += 1;
    }
    Ok(AttentionMap { latents, frames, weights })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn desk_detector(seed: u64) -> Detector<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Detector::init(&PerceiverConfig::desk(), 32, &mut rng).unwrap()
    }

    fn random_filter(rng: &mut ChaCha8Rng, n: usize) -> Tensor<f64> {
        Tensor::randn(vec![n, 16], 0.3, rng)
    }

    #[test]
    fn latent_count_independent_of_input_length() {
        let det = desk_detector(0);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let filter = random_filter(&mut rng, 16);
        for b in [5usize, 25, 60] {
            let z = Tensor::randn(vec![b, 32], 1.0, &mut rng);
            let (prob, maps) = det.forward(&z, &filter).unwrap();
            assert_eq!(maps.len(), 2);
            for m in &maps {
                assert_eq!(m.shape(), &[8, b]);
            }
            let p = prob.value();
            assert!(p > 0.0 && p < 1.0, "probability {p}");
        }
    }

    #[test]
    fn attention_rows_sum_to_one_on_desk_input() {
        let det = desk_detector(2);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let z = Tensor::randn(vec![25, 32], 1.0, &mut rng);
        let filter = random_filter(&mut rng, 16);
        let (_, maps) = det.forward(&z, &filter).unwrap();
        for m in maps {
            let map = AttentionMap::from_tensor(&m);
            for s in 0..map.latents {
                let sum: f64 = map.row(s).iter().sum();
                assert!((sum - 1.0).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn filter_mismatch_is_an_error() {
        let det = desk_detector(4);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let z = Tensor::randn(vec![10, 32], 1.0, &mut rng);
        let filter = Tensor::randn(vec![8, 16], 0.3, &mut rng); // wrong channels
        assert!(det.forward(&z, &filter).is_err());
    }

    #[test]
    fn output_depends_on_every_filter_weight() {
        let det = desk_detector(6);
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let z = Tensor::randn(vec![12, 32], 1.0, &mut rng);
        let base = random_filter(&mut rng, 16);
        let (p0, _) = det.forward(&z, &base).unwrap();
        let mut bumped = base.to_vec();
        bumped[37] += 0.25;
        let bumped = Tensor::constant(vec![16, 16], bumped).unwrap();
        let (p1, _) = det.forward(&z, &bumped).unwrap();
        assert_ne!(p0.value(), p1.value());
    }

    #[test]
    fn permutation_invariant_without_positions_and_impulse_kernel() {
        let mut cfg = PerceiverConfig::desk();
        cfg.use_positions = false;
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let det = Detector::<f64>::init(&cfg, 32, &mut rng).unwrap();
        // centered unit impulse per channel: conv becomes the identity
        let mut w = vec![0.0f64; 16 * 16];
        for c in 0..16 {
            w[c * 16 + 7] = 1.0;
        }
        let filter = Tensor::constant(vec![16, 16], w).unwrap();
        let b = 9;
        let z_data: Vec<f64> = (0..b * 32).map(|i| ((i * 37) % 100) as f64 / 50.0 - 1.0).collect();
        let z = Tensor::constant(vec![b, 32], z_data.clone()).unwrap();
        // rotate time frames
        let mut rotated = z_data[3 * 32..].to_vec();
        rotated.extend_from_slice(&z_data[..3 * 32]);
        let z_rot = Tensor::constant(vec![b, 32], rotated).unwrap();
        let (p, _) = det.forward(&z, &filter).unwrap();
        let (p_rot, _) = det.forward(&z_rot, &filter).unwrap();
        assert!(
            (p.value() - p_rot.value()).abs() < 1e-9,
            "{} vs {}",
            p.value(),
            p_rot.value()
        );
    }

    #[test]
    fn gradients_reach_z_filter_and_params() {
        let cfg = PerceiverConfig {
            latent_size: 3,
            proj_dim: 8,
            n_layers: 1,
            n_heads: 2,
            ff_hidden: 6,
            use_positions: true,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let det = Detector::<f64>::init(&cfg, 6, &mut rng).unwrap();
        let z = Tensor::randn(vec![5, 6], 0.5, &mut rng).as_param();
        let filter = Tensor::randn(vec![8, 4], 0.3, &mut rng).as_param();
        let mut set = ParamSet::new();
        det.collect("det", &mut set);
        let mut params = vec![z.clone(), filter.clone()];
        params.extend(set.tensors());
        let forward = || -> crate::Result<Tensor<f64>> {
            let (prob, _) = det.forward(&z, &filter)?;
            prob.log()
        };
        let report =
            crate::numerics::gradcheck::check_gradients(&params, forward, 1e-6, 1e-4).unwrap();
        assert!(report.max_rel_err <= 1e-4);
    }

    #[test]
    fn param_count_additive_in_layers_and_matches_tensors() {
        let m = 32;
        let mut counts = Vec::new();
        for l in 1..=5 {
            let mut cfg = PerceiverConfig::desk();
            cfg.n_layers = l;
            counts.push(count_detector_params(&cfg, m).unwrap());
            let mut rng = ChaCha8Rng::seed_from_u64(l as u64);
            let det = Detector::<f32>::init(&cfg, m, &mut rng).unwrap();
            let mut set = ParamSet::new();
            det.collect("det", &mut set);
            assert_eq!(set.total_elements(), counts[l - 1]);
        }
        let delta = counts[1] - counts[0];
        for l in 2..5 {
            assert_eq!(counts[l] - counts[l - 1], delta);
        }
    }

    #[test]
    fn paper_scale_per_layer_delta_matches_table() {
        let c1 = count_detector_params(&PerceiverConfig::paper(1), 144).unwrap();
        let c5 = count_detector_params(&PerceiverConfig::paper(5), 144).unwrap();
        let delta = (c5 - c1) as f64 / 4.0;
        let implied = 0.45e6; // (6M − 4.2M) / 4 layers
        assert!(
            (delta - implied).abs() / implied <= 0.25,
            "per-layer delta {delta}"
        );
    }

    #[test]
    fn desk_hand_count() {
        let cfg = PerceiverConfig::desk();
        let n = 16;
        let per_layer = 4 * (2 * n) + 2 * (4 * (n * n + n)) + (n * 32 + 32 + 32 * n + n);
        let expect = (32 * n + n) + 8 * n + 2 * per_layer + (n + 1);
        assert_eq!(count_detector_params(&cfg, 32).unwrap(), expect);
    }

    #[test]
    fn attention_export_roundtrip() {
        let out = DetectionOutput {
            probability: 0.7,
            cross_attention: vec![AttentionMap {
                latents: 16,
                frames: 25,
                weights: (0..400).map(|i| (i as f64 * 0.7919).sin().abs() / 25.0).collect(),
            }],
        };
        let dir = tempfile::tempdir().unwrap();
        let base = dir.path().join("attn");
        let (csv, pgm) = export_attention(&out, 0, &base).unwrap();
        let text = std::fs::read_to_string(&csv).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), 16);
        assert_eq!(lines[0].split(',').count(), 25);
        let back = read_attention_csv(&csv).unwrap();
        assert_eq!(back.latents, 16);
        assert_eq!(back.frames, 25);
        for (a, b) in back.weights.iter().zip(&out.cross_attention[0].weights) {
            let rel = (a - b).abs() / b.abs().max(1e-12);
            assert!(rel < 1e-6, "{a} vs {b}");
        }
        let pgm_bytes = std::fs::read(&pgm).unwrap();
        assert!(pgm_bytes.starts_with(b"P5\n25 16\n255\n"));
        assert_eq!(pgm_bytes.len(), b"P5\n25 16\n255\n".len() + 400);
        // layer out of range
        assert!(export_attention(&out, 1, &base).is_err());
    }

    #[test]
    fn constant_attention_renders_uniform_gray() {
        let out = DetectionOutput {
            probability: 0.5,
            cross_attention: vec![AttentionMap {
                latents: 4,
                frames: 5,
                weights: vec![0.2; 20],
            }],
        };
        let dir = tempfile::tempdir().unwrap();
        let (_, pgm) = export_attention(&out, 0, &dir.path().join("flat")).unwrap();
        let bytes = std::fs::read(&pgm).unwrap();
        let header_len = b"P5\n5 4\n255\n".len();
        assert!(bytes[header_len..].iter().all(|&b| b == 128));
    }
}
