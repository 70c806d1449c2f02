//! Target keyword encoder: a character-level LSTM hypernetwork that emits the
//! keyword-specific depthwise convolution weights (the matched filter).
//!
//! The filter can be generated offline and shipped as a small `.hskw` file;
//! the hypernetwork itself never has to live on the device.

use std::io::Read;
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{Linear, ParamSet};
use crate::numerics::{LstmCell, Real, Tensor};

/// Character inventory for keywords and CTC targets: lowercase letters,
/// space, apostrophe, hyphen — 29 symbols.
pub const CHARSET: &str = "abcdefghijklmnopqrstuvwxyz '-";
pub const CHARSET_SIZE: usize = 29;

pub fn char_index(c: char) -> Option<usize> {
    CHARSET.chars().position(|x| x == c)
}

/// Validated, normalized keyword text: lowercased, whitespace runs collapsed
/// to single spaces, trimmed, nonempty, all characters in the charset.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Keyword(String);

impl Keyword {
    pub fn new(text: &str) -> Result<Keyword> {
        let normalized = text
            .to_lowercase()
            .split_whitespace()
            .collect::<Vec<_>>()
            .join(" ");
        if normalized.is_empty() {
            return Err(Error::Input("keyword must be nonempty".to_string()));
        }
        if let Some(bad) = normalized.chars().find(|c| char_index(*c).is_none()) {
            return Err(Error::Input(format!(
                "keyword character {bad:?} outside charset {CHARSET:?}"
            )));
        }
        Ok(Keyword(normalized))
    }

    pub fn text(&self) -> &str {
        &self.0
    }

    pub fn indices(&self) -> Vec<usize> {
        self.0.chars().map(|c| char_index(c).unwrap()).collect()
    }
}

impl std::fmt::Display for Keyword {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq, Eq)]
#[serde(deny_unknown_fields)]
pub struct HypernetConfig {
    pub embed_dim: usize,
    pub lstm_layers: usize,
    pub lstm_hidden: usize,
    pub proj_hidden: usize,
    pub channels: usize,
    pub kernel: usize,
}

impl HypernetConfig {
    /// Published configuration: embedding 161, 4 LSTM layers of hidden 256,
    /// two projection layers onto the 64x16 filter.
    pub fn paper() -> Self {
        HypernetConfig {
            embed_dim: 161,
            lstm_layers: 4,
            lstm_hidden: 256,
            proj_hidden: 512,
            channels: 64,
            kernel: 16,
        }
    }

    /// Small configuration for single-core desk runs (filter 16x16).
    pub fn desk() -> Self {
        HypernetConfig {
            embed_dim: 16,
            lstm_layers: 1,
            lstm_hidden: 32,
            proj_hidden: 64,
            channels: 16,
            kernel: 16,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.lstm_layers == 0 {
            return Err(Error::Config("hypernet needs at least one LSTM layer".to_string()));
        }
        if self.embed_dim == 0
            || self.lstm_hidden == 0
            || self.proj_hidden == 0
            || self.channels == 0
            || self.kernel == 0
        {
            return Err(Error::Config("hypernet dimensions must be positive".to_string()));
        }
        Ok(())
    }

    pub fn filter_size(&self) -> usize {
        self.channels * self.kernel
    }
}

/// Exact trainable-parameter count for a config: embedding + LSTM stack +
/// both projection layers.
pub fn count_params(config: &HypernetConfig) -> Result<usize> {
    config.validate()?;
    let h = config.lstm_hidden;
    let mut total = CHARSET_SIZE * config.embed_dim;
    for layer in 0..config.lstm_layers {
        let input = if layer == 0 { config.embed_dim } else { h };
        total += 4 * h * (input + h + 1);
    }
    total += Linear::<f32>::param_count(h, config.proj_hidden);
    total += Linear::<f32>::param_count(config.proj_hidden, config.filter_size());
    Ok(total)
}

/// The hypernetwork: embed characters, run the LSTM stack left-to-right,
/// project the final top-layer hidden state to the flat filter, reshape to
/// channels x kernel.
pub struct Hypernet<T: Real> {
    pub embedding: Tensor<T>, // [CHARSET_SIZE, embed_dim]
    pub layers: Vec<LstmCell<T>>,
    pub proj1: Linear<T>,
    pub proj2: Linear<T>,
    config: HypernetConfig,
}

impl<T: Real> Hypernet<T> {
    pub fn init<R: Rng>(config: &HypernetConfig, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let embedding =
            Tensor::randn(vec![CHARSET_SIZE, config.embed_dim], 0.1, rng).as_param();
        let mut layers = Vec::with_capacity(config.lstm_layers);
        for layer in 0..config.lstm_layers {
            let input = if layer == 0 { config.embed_dim } else { config.lstm_hidden };
            layers.push(LstmCell::new(input, config.lstm_hidden, rng));
        }
        let proj1 = Linear::new(config.lstm_hidden, config.proj_hidden, rng);
        let proj2 = Linear::new(config.proj_hidden, config.filter_size(), rng);
        Ok(Hypernet {
            embedding,
            layers,
            proj1,
            proj2,
            config: config.clone(),
        })
    }

    pub fn config(&self) -> &HypernetConfig {
        &self.config
    }

    /// Tape-connected filter generation: [channels, kernel], deterministic
    /// given (keyword, params).
    pub fn generate(&self, keyword: &Keyword) -> Result<Tensor<T>> {
        let indices = keyword.indices();
        let mut sequence = self.embedding.gather_rows(&indices)?; // [L, E]
        let len = indices.len();
        for cell in &self.layers {
            let (mut h, mut c) = cell.zero_state();
            let mut outputs: Option<Tensor<T>> = None;
            for t in 0..len {
                let x_t = sequence.narrow(0, t, 1)?;
                let (h_t, c_t) = cell.step(&x_t, &h, &c)?;
                h = h_t;
                c = c_t;
                outputs = Some(match outputs {
                    None => h.clone(),
                    Some(o) => o.concat(&h, 0)?,
                });
            }
            sequence = outputs.unwrap(); // [L, H]
        }
        let last = sequence.narrow(0, len - 1, 1)?; // final top-layer state
        let flat = self.proj2.forward(&self.proj1.forward(&last)?.relu())?;
        flat.reshape(vec![self.config.channels, self.config.kernel])
    }

    pub fn collect(&self, prefix: &str, params: &mut ParamSet<T>) {
        params.push(format!("{prefix}.embedding"), self.embedding.clone());
        for (i, cell) in self.layers.iter().enumerate() {
            params.push(format!("{prefix}.lstm{i}.w_ih"), cell.w_ih.clone());
            params.push(format!("{prefix}.lstm{i}.w_hh"), cell.w_hh.clone());
            params.push(format!("{prefix}.lstm{i}.b"), cell.b.clone());
        }
        self.proj1.collect(&format!("{prefix}.proj1"), params);
        self.proj2.collect(&format!("{prefix}.proj2"), params);
    }

    /// Rebuild from a named tensor lookup (checkpoint load).
    pub fn from_params(
        config: &HypernetConfig,
        prefix: &str,
        lookup: &mut impl FnMut(&str) -> Result<Tensor<T>>,
    ) -> Result<Self> {
        config.validate()?;
        let embedding = lookup(&format!("{prefix}.embedding"))?;
        let mut layers = Vec::new();
        for i in 0..config.lstm_layers {
            layers.push(LstmCell::from_tensors(
                lookup(&format!("{prefix}.lstm{i}.w_ih"))?,
                lookup(&format!("{prefix}.lstm{i}.w_hh"))?,
                lookup(&format!("{prefix}.lstm{i}.b"))?,
            ));
        }
        let proj1 = Linear {
            w: lookup(&format!("{prefix}.proj1.w"))?,
            b: lookup(&format!("{prefix}.proj1.b"))?,
        };
        let proj2 = Linear {
            w: lookup(&format!("{prefix}.proj2.w"))?,
            b: lookup(&format!("{prefix}.proj2.b"))?,
        };
        Ok(Hypernet {
            embedding,
            layers,
            proj1,
            proj2,
            config: config.clone(),
        })
    }
}

/// Keyword text plus its generated convolution weights, as stored on disk.
#[derive(Debug, Clone, PartialEq)]
pub struct KeywordFilter {
    pub keyword: Keyword,
    pub channels: usize,
    pub kernel: usize,
    /// channels x kernel, row-major
    pub weights: Vec<f32>,
}

impl KeywordFilter {
    pub fn from_tensor(keyword: &Keyword, weights: &Tensor<f32>) -> Self {
        let (c, k) = weights.dims2();
        KeywordFilter {
            keyword: keyword.clone(),
            channels: c,
            kernel: k,
            weights: weights.to_vec(),
        }
    }

    pub fn to_tensor(&self) -> Tensor<f32> {
        Tensor::constant(vec![self.channels, self.kernel], self.weights.clone()).unwrap()
    }
}

const FILTER_MAGIC: &[u8; 8] = b"HSKW0001";
const FILTER_VERSION: u16 = 1;

/// Write the `.hskw` filter file:
/// magic | u16 version | u16 kernel | u16 channels | u32 keyword byte length |
/// UTF-8 keyword | channels·kernel f32 | CRC32 of all preceding bytes.
/// All integers little-endian. Round-trips bit-exactly.
pub fn write_filter(path: &Path, filter: &KeywordFilter) -> Result<()> {
    let mut buf = Vec::new();
    buf.extend_from_slice(FILTER_MAGIC);
    buf.extend_from_slice(&FILTER_VERSION.to_le_bytes());
    buf.extend_from_slice(&(filter.kernel as u16).to_le_bytes());
    buf.extend_from_slice(&(filter.channels as u16).to_le_bytes());
    let kw = filter.keyword.text().as_bytes();
    buf.extend_from_slice(&(kw.len() as u32).to_le_bytes());
    buf.extend_from_slice(kw);
    for w in &filter.weights {
        buf.extend_from_slice(&w.to_le_bytes());
    }
    let crc = crc32fast::hash(&buf);
    buf.extend_from_slice(&crc.to_le_bytes());
    std::fs::write(path, &buf).map_err(|e| Error::io(path, e))
}

pub fn read_filter(path: &Path) -> Result<KeywordFilter> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(|e| Error::io(path, e))?;
    if bytes.len() < 20 {
        return Err(Error::format(path, "file shorter than fixed header"));
    }
    let (body, crc_bytes) = bytes.split_at(bytes.len() - 4);
    let stored = u32::from_le_bytes(crc_bytes.try_into().unwrap());
    let computed = crc32fast::hash(body);
    if stored != computed {
        return Err(Error::format(
            path,
            format!("CRC mismatch: stored {stored:#010x}, computed {computed:#010x}"),
        ));
    }
    if &body[0..8] != FILTER_MAGIC {
        return Err(Error::format(path, "bad magic, want HSKW0001"));
    }
    let version = u16::from_le_bytes(body[8..10].try_into().unwrap());
    if version != FILTER_VERSION {
        return Err(Error::format(path, format!("unsupported version {version}")));
    }
    let kernel = u16::from_le_bytes(body[10..12].try_into().unwrap()) as usize;
    let channels = u16::from_le_bytes(body[12..14].try_into().unwrap()) as usize;
    let kw_len = u32::from_le_bytes(body[14..18].try_into().unwrap()) as usize;
    let weights_off = 18 + kw_len;
    let expect_len = weights_off + channels * kernel * 4;
    if body.len() != expect_len {
        return Err(Error::format(
            path,
            format!("size mismatch: want {expect_len}+4 bytes, got {}", bytes.len()),
        ));
    }
    let kw_text = std::str::from_utf8(&body[18..weights_off])
        .map_err(|_| Error::format(path, "keyword is not UTF-8"))?;
    let keyword = Keyword::new(kw_text)?;
    let mut weights = Vec::with_capacity(channels * kernel);
    for chunk in body[weights_off..].chunks_exact(4) {
        weights.push(f32::from_le_bytes(chunk.try_into().unwrap()));
    }
    Ok(KeywordFilter {
        keyword,
        channels,
        kernel,
        weights,
    })
}

/// Writer for a filter produced in memory (the gen-weights path).
pub fn generate_filter_file(
    hypernet: &Hypernet<f32>,
    keyword: &Keyword,
    path: &Path,
) -> Result<KeywordFilter> {
    let weights = hypernet.generate(keyword)?;
    let filter = KeywordFilter::from_tensor(keyword, &weights.detach());
    write_filter(path, &filter)?;
    Ok(filter)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn keyword_normalization_and_validation() {
        let k = Keyword::new("  Legal   BASIS ").unwrap();
        assert_eq!(k.text(), "legal basis");
        assert!(Keyword::new("").is_err());
        assert!(Keyword::new("   ").is_err());
        assert!(Keyword::new("café").is_err());
        assert!(Keyword::new("it's-ok").is_ok());
    }

    #[test]
    fn paper_config_filter_is_1024_values() {
        let cfg = HypernetConfig::paper();
        assert_eq!(cfg.filter_size(), 1024);
        assert_eq!(cfg.channels, 64);
        assert_eq!(cfg.kernel, 16);
    }

    #[test]
    fn paper_param_count_within_ten_percent_of_2p7m() {
        let n = count_params(&HypernetConfig::paper()).unwrap() as f64;
        let target = 2.7e6;
        assert!((n - target).abs() / target <= 0.10, "count {n}");
    }

    #[test]
    fn desk_param_count_hand_arithmetic() {
        let cfg = HypernetConfig::desk();
        // embed 29·16 + lstm 4·32·(16+32+1) + proj 32·64+64 + 64·256+256
        let expect = 29 * 16 + 4 * 32 * (16 + 32 + 1) + (32 * 64 + 64) + (64 * 256 + 256);
        assert_eq!(count_params(&cfg).unwrap(), expect);
    }

    #[test]
    fn zero_layer_config_rejected() {
        let mut cfg = HypernetConfig::desk();
        cfg.lstm_layers = 0;
        assert!(count_params(&cfg).is_err());
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(Hypernet::<f32>::init(&cfg, &mut rng).is_err());
    }

    #[test]
    fn count_matches_collected_tensors() {
        let cfg = HypernetConfig::desk();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let net = Hypernet::<f32>::init(&cfg, &mut rng).unwrap();
        let mut set = ParamSet::new();
        net.collect("hypernet", &mut set);
        assert_eq!(set.total_elements(), count_params(&cfg).unwrap());
    }

    #[test]
    fn generation_is_deterministic_and_sized() {
        let cfg = HypernetConfig::desk();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let net = Hypernet::<f64>::init(&cfg, &mut rng).unwrap();
        let k = Keyword::new("cat").unwrap();
        let a = net.generate(&k).unwrap();
        let b = net.generate(&k).unwrap();
        assert_eq!(a.shape(), &[16, 16]);
        let (av, bv) = (a.to_vec(), b.to_vec());
        assert!(av.iter().zip(&bv).all(|(x, y)| x.to_bits() == y.to_bits()));
    }

    #[test]
    fn different_keywords_differ() {
        let cfg = HypernetConfig::desk();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let net = Hypernet::<f64>::init(&cfg, &mut rng).unwrap();
        let a = net.generate(&Keyword::new("cat").unwrap()).unwrap().to_vec();
        let b = net.generate(&Keyword::new("dog").unwrap()).unwrap().to_vec();
        let max_diff = a
            .iter()
            .zip(&b)
            .map(|(x, y)| (x - y).abs())
            .fold(0.0f64, f64::max);
        assert!(max_diff > 0.0);
    }

    #[test]
    fn output_shape_independent_of_keyword_length() {
        let cfg = HypernetConfig::desk();
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let net = Hypernet::<f32>::init(&cfg, &mut rng).unwrap();
        for text in ["a", "hi", "legal basis of the union"] {
            let w = net.generate(&Keyword::new(text).unwrap()).unwrap();
            assert_eq!(w.shape(), &[16, 16]);
        }
    }

    #[test]
    fn filter_file_roundtrip_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("kw.hskw");
        let filter = KeywordFilter {
            keyword: Keyword::new("legal basis").unwrap(),
            channels: 16,
            kernel: 16,
            weights: (0..256).map(|i| (i as f32 * 0.618).sin()).collect(),
        };
        write_filter(&path, &filter).unwrap();
        let back = read_filter(&path).unwrap();
        assert_eq!(back, filter);
        let bytes_a = std::fs::read(&path).unwrap();
        write_filter(&path, &back).unwrap();
        assert_eq!(bytes_a, std::fs::read(&path).unwrap());
    }

    #[test]
    fn corrupted_filter_file_fails_crc() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("kw.hskw");
        let filter = KeywordFilter {
            keyword: Keyword::new("dog").unwrap(),
            channels: 2,
            kernel: 3,
            weights: vec![0.5; 6],
        };
        write_filter(&path, &filter).unwrap();
        let mut bytes = std::fs::read(&path).unwrap();
        let mid = bytes.len() / 2;
        bytes[mid] ^= 0xff;
        std::fs::write(&path, &bytes).unwrap();
        let err = read_filter(&path).unwrap_err().to_string();
        assert!(err.contains("CRC"), "{err}");
    }

    #[test]
    fn gradients_reach_hypernet_through_filter() {
        // finite-difference check on a 1-char keyword at desk scale
        let mut cfg = HypernetConfig::desk();
        cfg.lstm_hidden = 4;
        cfg.embed_dim = 3;
        cfg.proj_hidden = 5;
        cfg.channels = 2;
        cfg.kernel = 3;
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let net = Hypernet::<f64>::init(&cfg, &mut rng).unwrap();
        let mut set = ParamSet::new();
        net.collect("h", &mut set);
        let k = Keyword::new("a").unwrap();
        let forward = || -> crate::Result<Tensor<f64>> {
            let w = net.generate(&k)?;
            w.mul(&w)?.sum_all().log()
        };
        let report =
            crate::numerics::gradcheck::check_gradients(&set.tensors(), forward, 1e-5, 1e-4)
                .unwrap();
        assert!(report.max_rel_err <= 1e-4);
    }
}
