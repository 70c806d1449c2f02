use rand::Rng;

use super::tensor::{Real, Tensor};
use crate::error::Result;

/// One LSTM layer's parameters. Gate order within the fused width-4H blocks
/// is input | forget | candidate | output.
pub struct LstmCell<T: Real> {
    pub w_ih: Tensor<T>, // [input_dim, 4H]
    pub w_hh: Tensor<T>, // [H, 4H]
    pub b: Tensor<T>,    // [4H]
    hidden: usize,
}

impl<T: Real> LstmCell<T> {
    pub fn new<R: Rng>(input_dim: usize, hidden: usize, rng: &mut R) -> Self {
        let std_ih = 1.0 / (input_dim as f64).sqrt();
        let std_hh = 1.0 / (hidden as f64).sqrt();
        let mut bias = vec![T::zero(); 4 * hidden];
        // forget gate opens at init
        for v in bias.iter_mut().skip(hidden).take(hidden) {
            *v = T::one();
        }
        LstmCell {
            w_ih: Tensor::randn(vec![input_dim, 4 * hidden], std_ih, rng).as_param(),
            w_hh: Tensor::randn(vec![hidden, 4 * hidden], std_hh, rng).as_param(),
            b: Tensor::param(vec![4 * hidden], bias).unwrap(),
            hidden,
        }
    }

    pub fn from_tensors(w_ih: Tensor<T>, w_hh: Tensor<T>, b: Tensor<T>) -> Self {
        let hidden = w_hh.shape()[0];
        LstmCell { w_ih, w_hh, b, hidden }
    }

    pub fn hidden_size(&self) -> usize {
        self.hidden
    }

    pub fn zero_state(&self) -> (Tensor<T>, Tensor<T>) {
        (
            Tensor::zeros(vec![1, self.hidden]),
            Tensor::zeros(vec![1, self.hidden]),
        )
    }

    /// Standard LSTM cell update, differentiable through the tape.
    pub fn step(
        &self,
        x: &Tensor<T>,
        h_prev: &Tensor<T>,
        c_prev: &Tensor<T>,
    ) -> Result<(Tensor<T>, Tensor<T>)> {
        let h = self.hidden;
        let gates = x
            .matmul(&self.w_ih)?
            .add(&h_prev.matmul(&self.w_hh)?)?
            .add(&self.b)?;
        let i = gates.narrow(1, 0, h)?.sigmoid();
        let f = gates.narrow(1, h, h)?.sigmoid();
        let g = gates.narrow(1, 2 * h, h)?.tanh();
        let o = gates.narrow(1, 3 * h, h)?.sigmoid();
        let c_t = f.mul(c_prev)?.add(&i.mul(&g)?)?;
        let h_t = o.mul(&c_t.tanh())?;
        Ok((h_t, c_t))
    }

    pub fn param_count(&self) -> usize {
        self.w_ih.numel() + self.w_hh.numel() + self.b.numel()
    }
}

/// Free-function form of the cell update.
pub fn lstm_step<T: Real>(
    x_t: &Tensor<T>,
    h_prev: &Tensor<T>,
    c_prev: &Tensor<T>,
    params: &LstmCell<T>,
) -> Result<(Tensor<T>, Tensor<T>)> {
    params.step(x_t, h_prev, c_prev)
}
