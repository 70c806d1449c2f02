//! Shared network building blocks on top of the tensor engine: linear layers,
//! multi-head attention, feed-forward stacks, sinusoidal positions, and the
//! named-parameter registry the checkpoint format serializes.

use rand::Rng;

use crate::error::{Error, Result};
use crate::numerics::{Real, Tensor};

/// Ordered name → tensor registry. Names are path-like ("detector.layers.0.
/// cross.wq") and must be unique; ordering is the construction order, which
/// fixes the optimizer's parameter order and the checkpoint layout.
pub struct ParamSet<T: Real> {
    entries: Vec<(String, Tensor<T>)>,
}

impl<T: Real> Default for ParamSet<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Real> ParamSet<T> {
    pub fn new() -> Self {
        ParamSet { entries: Vec::new() }
    }

    pub fn push(&mut self, name: impl Into<String>, tensor: Tensor<T>) {
        let name = name.into();
        debug_assert!(
            !self.entries.iter().any(|(n, _)| *n == name),
            "duplicate param name {name}"
        );
        self.entries.push((name, tensor));
    }

    pub fn iter(&self) -> impl Iterator<Item = &(String, Tensor<T>)> {
        self.entries.iter()
    }

    pub fn tensors(&self) -> Vec<Tensor<T>> {
        self.entries.iter().map(|(_, t)| t.clone()).collect()
    }

    pub fn names(&self) -> Vec<&str> {
        self.entries.iter().map(|(n, _)| n.as_str()).collect()
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<T>> {
        self.entries.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn total_elements(&self) -> usize {
        self.entries.iter().map(|(_, t)| t.numel()).sum()
    }

    pub fn zero_grads(&self) {
        for (_, t) in &self.entries {
            t.zero_grad();
        }
    }
}

pub struct Linear<T: Real> {
    pub w: Tensor<T>, // [in, out]
    pub b: Tensor<T>, // [out]
}

impl<T: Real> Linear<T> {
    pub fn new<R: Rng>(input: usize, output: usize, rng: &mut R) -> Self {
        let std = 1.0 / (input as f64).sqrt();
        Linear {
            w: Tensor::randn(vec![input, output], std, rng).as_param(),
            b: Tensor::param(vec![output], vec![T::zero(); output]).unwrap(),
        }
    }

    pub fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        x.matmul(&self.w)?.add(&self.b)
    }

    pub fn collect(&self, prefix: &str, params: &mut ParamSet<T>) {
        params.push(format!("{prefix}.w"), self.w.clone());
        params.push(format!("{prefix}.b"), self.b.clone());
    }

    pub fn param_count(input: usize, output: usize) -> usize {
        input * output + output
    }
}

pub struct LayerNorm<T: Real> {
    pub gain: Tensor<T>,
    pub bias: Tensor<T>,
    eps: T,
}

impl<T: Real> LayerNorm<T> {
    pub fn new(dim: usize) -> Self {
        LayerNorm {
            gain: Tensor::param(vec![dim], vec![T::one(); dim]).unwrap(),
            bias: Tensor::param(vec![dim], vec![T::zero(); dim]).unwrap(),
            eps: T::from_f64(1e-5),
        }
    }

    pub fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        x.layernorm(&self.gain, &self.bias, self.eps)
    }

    pub fn collect(&self, prefix: &str, params: &mut ParamSet<T>) {
        params.push(format!("{prefix}.gain"), self.gain.clone());
        params.push(format!("{prefix}.bias"), self.bias.clone());
    }
}

/// Multi-head scaled dot-product attention over 2-d sequences. Queries come
/// from `q_in` (rows), keys and values from `kv_in`. Returns the attended
/// output and the head-averaged attention matrix (rows sum to one).
pub struct MultiHeadAttention<T: Real> {
    pub wq: Linear<T>,
    pub wk: Linear<T>,
    pub wv: Linear<T>,
    pub wo: Linear<T>,
    n_heads: usize,
    head_dim: usize,
}

impl<T: Real> MultiHeadAttention<T> {
    pub fn new<R: Rng>(dim: usize, n_heads: usize, rng: &mut R) -> Result<Self> {
        if dim % n_heads != 0 {
            return Err(Error::Config(format!(
                "attention dim {dim} not divisible by {n_heads} heads"
            )));
        }
        Ok(MultiHeadAttention {
            wq: Linear::new(dim, dim, rng),
            wk: Linear::new(dim, dim, rng),
            wv: Linear::new(dim, dim, rng),
            wo: Linear::new(dim, dim, rng),
            n_heads,
            head_dim: dim / n_heads,
        })
    }

    pub fn forward(&self, q_in: &Tensor<T>, kv_in: &Tensor<T>) -> Result<(Tensor<T>, Tensor<T>)> {
        let q = self.wq.forward(q_in)?;
        let k = self.wk.forward(kv_in)?;
        let v = self.wv.forward(kv_in)?;
        let scale = T::from_f64(1.0 / (self.head_dim as f64).sqrt());
        let mut merged: Option<Tensor<T>> = None;
        let mut attn_sum: Option<Tensor<T>> = None;
        for h in 0..self.n_heads {
            let off = h * self.head_dim;
            let qh = q.narrow(1, off, self.head_dim)?;
            let kh = k.narrow(1, off, self.head_dim)?;
            let vh = v.narrow(1, off, self.head_dim)?;
            let logits = qh.matmul(&kh.transpose()?)?.mul_scalar(scale);
            let attn = logits.softmax(1)?;
            let out_h = attn.matmul(&vh)?;
            merged = Some(match merged {
                None => out_h,
                Some(m) => m.concat(&out_h, 1)?,
            });
            attn_sum = Some(match attn_sum {
                None => attn,
                Some(a) => a.add(&attn)?,
            });
        }
        let out = self.wo.forward(&merged.unwrap())?;
        let attn_mean = attn_sum
            .unwrap()
            .mul_scalar(T::from_f64(1.0 / self.n_heads as f64));
        Ok((out, attn_mean))
    }

    pub fn collect(&self, prefix: &str, params: &mut ParamSet<T>) {
        self.wq.collect(&format!("{prefix}.wq"), params);
        self.wk.collect(&format!("{prefix}.wk"), params);
        self.wv.collect(&format!("{prefix}.wv"), params);
        self.wo.collect(&format!("{prefix}.wo"), params);
    }

    pub fn param_count(dim: usize) -> usize {
        4 * Linear::<T>::param_count(dim, dim)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Relu,
    Gelu,
    Swish,
}

pub fn activate<T: Real>(x: &Tensor<T>, act: Activation) -> Result<Tensor<T>> {
    match act {
        Activation::Relu => Ok(x.relu()),
        Activation::Gelu => gelu(x),
        Activation::Swish => x.mul(&x.sigmoid()),
    }
}

/// tanh-approximation GELU, composed from primitive ops.
pub fn gelu<T: Real>(x: &Tensor<T>) -> Result<Tensor<T>> {
    let c = T::from_f64((2.0 / std::f64::consts::PI).sqrt());
    let x3 = x.mul(x)?.mul(x)?;
    let inner = x.add(&x3.mul_scalar(T::from_f64(0.044_715)))?.mul_scalar(c);
    let t = inner.tanh().add_scalar(T::one());
    Ok(x.mul(&t)?.mul_scalar(T::from_f64(0.5)))
}

/// Two-layer feed-forward block.
pub struct FeedForward<T: Real> {
    pub lin1: Linear<T>,
    pub lin2: Linear<T>,
    act: Activation,
}

impl<T: Real> FeedForward<T> {
    pub fn new<R: Rng>(dim: usize, hidden: usize, act: Activation, rng: &mut R) -> Self {
        FeedForward {
            lin1: Linear::new(dim, hidden, rng),
            lin2: Linear::new(hidden, dim, rng),
            act,
        }
    }

    pub fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        self.lin2.forward(&activate(&self.lin1.forward(x)?, self.act)?)
    }

    pub fn collect(&self, prefix: &str, params: &mut ParamSet<T>) {
        self.lin1.collect(&format!("{prefix}.lin1"), params);
        self.lin2.collect(&format!("{prefix}.lin2"), params);
    }

    pub fn param_count(dim: usize, hidden: usize) -> usize {
        Linear::<T>::param_count(dim, hidden) + Linear::<T>::param_count(hidden, dim)
    }
}

/// Fixed sinusoidal positional encoding, [len, dim], not trainable.
pub fn sinusoidal_positions<T: Real>(len: usize, dim: usize) -> Tensor<T> {
    let mut data = vec![T::zero(); len * dim];
    for pos in 0..len {
        for i in 0..dim {
            let angle = pos as f64 / 10_000f64.powf(2.0 * (i / 2) as f64 / dim as f64);
            let v = if i % 2 == 0 { angle.sin() } else { angle.cos() };
            data[pos * dim + i] = T::from_f64(v);
        }
    }
    Tensor::constant(vec![len, dim], data).unwrap()
}
