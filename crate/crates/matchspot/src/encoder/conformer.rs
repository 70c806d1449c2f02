use rand::Rng;

use super::{EncodedSpeech, EncoderConfig};
use crate::error::Result;
use crate::frontend::{MelSpectrogram, N_MELS};
use crate::nn::{
    activate, sinusoidal_positions, Activation, FeedForward, LayerNorm, Linear,
    MultiHeadAttention, ParamSet,
};
use crate::numerics::{Real, Tensor};

/// Centered stride-1 convolution over rows expressed as shifted matmuls,
/// then decimated. `taps[k]` is the [D_in, D_out] weight of kernel tap k.
struct StridedConv<T: Real> {
    taps: Vec<Tensor<T>>,
    bias: Tensor<T>,
    stride: usize,
}

impl<T: Real> StridedConv<T> {
    fn new<R: Rng>(input: usize, output: usize, kernel: usize, stride: usize, rng: &mut R) -> Self {
        let std = 1.0 / ((input * kernel) as f64).sqrt();
        StridedConv {
            taps: (0..kernel)
                .map(|_| Tensor::randn(vec![input, output], std, rng).as_param())
                .collect(),
            bias: Tensor::param(vec![output], vec![T::zero(); output]).unwrap(),
            stride,
        }
    }

    fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let (t, d) = x.dims2();
        let k = self.taps.len();
        let pad_l = (k - 1) / 2;
        let pad_r = k - 1 - pad_l;
        let mut padded = x.clone();
        if pad_l > 0 {
            padded = Tensor::zeros(vec![pad_l, d]).concat(&padded, 0)?;
        }
        if pad_r > 0 {
            padded = padded.concat(&Tensor::zeros(vec![pad_r, d]), 0)?;
        }
        let mut acc: Option<Tensor<T>> = None;
        for (kk, tap) in self.taps.iter().enumerate() {
            let window = padded.narrow(0, kk, t)?;
            let term = window.matmul(tap)?;
            acc = Some(match acc {
                None => term,
                Some(a) => a.add(&term)?,
            });
        }
        let full = acc.unwrap().add(&self.bias)?;
        if self.stride == 1 {
            Ok(full)
        } else {
            full.downsample_rows(self.stride)
        }
    }

    fn collect(&self, prefix: &str, params: &mut ParamSet<T>) {
        for (k, tap) in self.taps.iter().enumerate() {
            params.push(format!("{prefix}.tap{k}"), tap.clone());
        }
        params.push(format!("{prefix}.bias"), self.bias.clone());
    }
}

/// Macaron Conformer block: half-step FF, self-attention, depthwise conv
/// module, half-step FF, closing layernorm. Pre-norm residuals throughout.
pub struct ConformerBlock<T: Real> {
    ff1: FeedForward<T>,
    ff1_norm: LayerNorm<T>,
    attn: MultiHeadAttention<T>,
    attn_norm: LayerNorm<T>,
    conv_norm: LayerNorm<T>,
    conv_in: Linear<T>,   // M → 2M, GLU halves it
    conv_dw: Tensor<T>,   // [M, kernel] depthwise weights
    conv_out: Linear<T>,  // M → M
    ff2: FeedForward<T>,
    ff2_norm: LayerNorm<T>,
    out_norm: LayerNorm<T>,
    dim: usize,
}

impl<T: Real> ConformerBlock<T> {
    pub fn new<R: Rng>(config: &EncoderConfig, rng: &mut R) -> Result<Self> {
        let m = config.model_dim;
        let hidden = m * config.ff_expansion;
        Ok(ConformerBlock {
            ff1: FeedForward::new(m, hidden, Activation::Swish, rng),
            ff1_norm: LayerNorm::new(m),
            attn: MultiHeadAttention::new(m, config.n_heads, rng)?,
            attn_norm: LayerNorm::new(m),
            conv_norm: LayerNorm::new(m),
            conv_in: Linear::new(m, 2 * m, rng),
            conv_dw: Tensor::randn(vec![m, config.conv_kernel], 1.0 / (config.conv_kernel as f64).sqrt(), rng)
                .as_param(),
            conv_out: Linear::new(m, m, rng),
            ff2: FeedForward::new(m, hidden, Activation::Swish, rng),
            ff2_norm: LayerNorm::new(m),
            out_norm: LayerNorm::new(m),
            dim: m,
        })
    }

    /// Returns the block output and the head-averaged self-attention map.
    pub fn forward(&self, x: &Tensor<T>) -> Result<(Tensor<T>, Tensor<T>)> {
        let half = T::from_f64(0.5);
        let x = x.add(&self.ff1.forward(&self.ff1_norm.forward(x)?)?.mul_scalar(half))?;
        let normed = self.attn_norm.forward(&x)?;
        let (attn_out, attn_map) = self.attn.forward(&normed, &normed)?;
        let x = x.add(&attn_out)?;
        let x = x.add(&self.conv_module(&x)?)?;
        let x = x.add(&self.ff2.forward(&self.ff2_norm.forward(&x)?)?.mul_scalar(half))?;
        Ok((self.out_norm.forward(&x)?, attn_map))
    }

    fn conv_module(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let m = self.dim;
        let y = self.conv_in.forward(&self.conv_norm.forward(x)?)?;
        let a = y.narrow(1, 0, m)?;
        let b = y.narrow(1, m, m)?;
        let gated = a.mul(&b.sigmoid())?; // GLU
        let conv = gated
            .transpose()?
            .depthwise_conv1d(&self.conv_dw, 1)?
            .transpose()?;
        self.conv_out.forward(&activate(&conv, Activation::Swish)?)
    }

    pub fn collect(&self, prefix: &str, params: &mut ParamSet<T>) {
        self.ff1_norm.collect(&format!("{prefix}.ff1_norm"), params);
        self.ff1.collect(&format!("{prefix}.ff1"), params);
        self.attn_norm.collect(&format!("{prefix}.attn_norm"), params);
        self.attn.collect(&format!("{prefix}.attn"), params);
        self.conv_norm.collect(&format!("{prefix}.conv_norm"), params);
        self.conv_in.collect(&format!("{prefix}.conv_in"), params);
        params.push(format!("{prefix}.conv_dw"), self.conv_dw.clone());
        self.conv_out.collect(&format!("{prefix}.conv_out"), params);
        self.ff2_norm.collect(&format!("{prefix}.ff2_norm"), params);
        self.ff2.collect(&format!("{prefix}.ff2"), params);
        self.out_norm.collect(&format!("{prefix}.out_norm"), params);
    }
}

/// Conformer-lite speech encoder: strided-conv subsampling to the target
/// frame rate, projection to the model width, sinusoidal positions, then the
/// block stack.
pub struct ConformerEncoder<T: Real> {
    sub1: StridedConv<T>,
    sub2: Option<StridedConv<T>>,
    proj: Linear<T>,
    pub blocks: Vec<ConformerBlock<T>>,
    config: EncoderConfig,
}

impl<T: Real> ConformerEncoder<T> {
    pub fn init<R: Rng>(config: &EncoderConfig, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let m = config.model_dim;
        let sub1 = StridedConv::new(N_MELS, m, 3, 2, rng);
        let sub2 = (config.subsample_factor == 4).then(|| StridedConv::new(m, m, 3, 2, rng));
        let proj = Linear::new(m, m, rng);
        let blocks = (0..config.n_layers)
            .map(|_| ConformerBlock::new(config, rng))
            .collect::<Result<Vec<_>>>()?;
        Ok(ConformerEncoder {
            sub1,
            sub2,
            proj,
            blocks,
            config: config.clone(),
        })
    }

    pub fn config(&self) -> &EncoderConfig {
        &self.config
    }

    pub fn encode(&self, mel: &MelSpectrogram) -> Result<EncodedSpeech<T>> {
        let data: Vec<T> = mel.frames.iter().map(|&v| T::from_f64(v as f64)).collect();
        let x = Tensor::constant(vec![mel.n_frames, mel.n_mels], data)?;
        let vectors = self.forward(&x)?;
        Ok(EncodedSpeech {
            vectors,
            frame_period_ms: self.config.frame_period_ms(),
        })
    }

    /// Forward from a [T, N_MELS] tensor (kept separate so tests can feed
    /// arbitrary tensors and gradient-check the whole path).
    pub fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let mut y = activate(&self.sub1.forward(x)?, Activation::Relu)?;
        if let Some(sub2) = &self.sub2 {
            y = activate(&sub2.forward(&y)?, Activation::Relu)?;
        }
        let mut y = self.proj.forward(&y)?;
        let b = y.shape()[0];
        y = y.add(&sinusoidal_positions(b, self.config.model_dim))?;
        for block in &self.blocks {
            y = block.forward(&y)?.0;
        }
        Ok(y)
    }

    pub fn collect(&self, prefix: &str, params: &mut ParamSet<T>) {
        self.sub1.collect(&format!("{prefix}.sub1"), params);
        if let Some(sub2) = &self.sub2 {
            sub2.collect(&format!("{prefix}.sub2"), params);
        }
        self.proj.collect(&format!("{prefix}.proj"), params);
        for (i, block) in self.blocks.iter().enumerate() {
            block.collect(&format!("{prefix}.blocks.{i}"), params);
        }
    }
}
