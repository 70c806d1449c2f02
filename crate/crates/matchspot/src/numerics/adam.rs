use super::tensor::{Real, Tensor};
use crate::error::{Error, Result};

/// Adam optimizer state: per-parameter first/second moment accumulators plus
/// a step counter. Moments start at zero; the counter increases by one per
/// update. Updates are bias-corrected and applied to the parameters in place.
pub struct AdamState<T: Real> {
    pub lr: T,
    pub beta1: T,
    pub beta2: T,
    pub eps: T,
    step: u64,
    m: Vec<Vec<T>>,
    v: Vec<Vec<T>>,
    shapes: Vec<Vec<usize>>,
}

impl<T: Real> AdamState<T> {
    pub fn new(params: &[Tensor<T>], lr: T) -> Self {
        AdamState {
            lr,
            beta1: T::from_f64(0.9),
            beta2: T::from_f64(0.999),
            eps: T::from_f64(1e-8),
            step: 0,
            m: params.iter().map(|p| vec![T::zero(); p.numel()]).collect(),
            v: params.iter().map(|p| vec![T::zero(); p.numel()]).collect(),
            shapes: params.iter().map(|p| p.shape().to_vec()).collect(),
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// One bias-corrected update over the parameter list. A parameter with no
    /// stored gradient is treated as having zero gradient (moments still
    /// decay). Gradients are left untouched; callers zero them explicitly.
    pub fn step(&mut self, params: &[Tensor<T>]) -> Result<()> {
        if params.len() != self.m.len() {
            return Err(Error::shape(
                "adam_step",
                format!("state tracks {} params, got {}", self.m.len(), params.len()),
            ));
        }
        for (p, shape) in params.iter().zip(&self.shapes) {
            if p.shape() != shape.as_slice() {
                return Err(Error::shape(
                    "adam_step",
                    format!("param shape {:?} does not match state {:?}", p.shape(), shape),
                ));
            }
        }
        self.step += 1;
        let t = self.step as i32;
        let bc1 = T::one() - self.beta1.powi(t);
        let bc2 = T::one() - self.beta2.powi(t);
        let one = T::one();
        for (i, p) in params.iter().enumerate() {
            let grad = p.grad();
            let m = &mut self.m[i];
            let v = &mut self.v[i];
            p.write_data(|data| {
                for j in 0..data.len() {
                    let g = grad.as_ref().map_or(T::zero(), |g| g[j]);
                    m[j] = self.beta1 * m[j] + (one - self.beta1) * g;
                    v[j] = self.beta2 * v[j] + (one - self.beta2) * g * g;
                    let m_hat = m[j] / bc1;
                    let v_hat = v[j] / bc2;
                    data[j] -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
                }
            });
        }
        Ok(())
    }

    /// Serialization access: (m, v) moment slices per parameter.
    pub fn moments(&self) -> (&[Vec<T>], &[Vec<T>]) {
        (&self.m, &self.v)
    }

    /// Rebuild state from checkpointed parts.
    pub fn from_parts(
        params: &[Tensor<T>],
        lr: T,
        step: u64,
        m: Vec<Vec<T>>,
        v: Vec<Vec<T>>,
    ) -> Result<Self> {
        if m.len() != params.len() || v.len() != params.len() {
            return Err(Error::shape("adam_restore", "moment count mismatch"));
        }
        for ((p, mi), vi) in params.iter().zip(&m).zip(&v) {
            if mi.len() != p.numel() || vi.len() != p.numel() {
                return Err(Error::shape("adam_restore", "moment length mismatch"));
            }
        }
        Ok(AdamState {
            lr,
            beta1: T::from_f64(0.9),
            beta2: T::from_f64(0.999),
            eps: T::from_f64(1e-8),
            step,
            m,
            v,
            shapes: params.iter().map(|p| p.shape().to_vec()).collect(),
        })
    }
}
