//! Central finite-difference verification of analytic gradients.
//!
//! Test support: the checker perturbs each parameter element by ±h, rebuilds
//! the forward pass, and compares the difference quotient against the
//! gradient produced by one backward pass. Run it with `f64` tensors.

use super::tensor::{Real, Tensor};
use crate::error::{Error, Result};

pub struct GradCheckReport {
    pub max_rel_err: f64,
    pub elements_checked: usize,
}

/// Compare analytic gradients of `forward` (a scalar-loss builder over
/// `params`) against central finite differences with step `h`.
///
/// An element passes when |analytic − fd| ≤ tol·max(|analytic|, |fd|) or the
/// absolute difference is below 1e-8 (both near zero).
pub fn check_gradients<T: Real>(
    params: &[Tensor<T>],
    forward: impl Fn() -> Result<Tensor<T>>,
    h: f64,
    tol: f64,
) -> Result<GradCheckReport> {
    for p in params {
        if !p.requires_grad() {
            return Err(Error::numeric("gradcheck", "all checked params must require grad"));
        }
        p.zero_grad();
    }
    let loss = forward()?;
    loss.backward()?;
    let analytic: Vec<Vec<f64>> = params
        .iter()
        .map(|p| {
            p.grad()
                .map(|g| g.iter().map(|v| Real::to_f64(*v)).collect())
                .unwrap_or_else(|| vec![0.0; p.numel()])
        })
        .collect();

    let mut max_rel = 0.0f64;
    let mut checked = 0usize;
    for (pi, p) in params.iter().enumerate() {
        for j in 0..p.numel() {
            let orig = p.to_vec()[j];
            p.write_data(|d| d[j] = orig + T::from_f64(h));
            let loss_plus = Real::to_f64(forward()?.value());
            p.write_data(|d| d[j] = orig - T::from_f64(h));
            let loss_minus = Real::to_f64(forward()?.value());
            p.write_data(|d| d[j] = orig);
            let fd = (loss_plus - loss_minus) / (2.0 * h);
            let a = analytic[pi][j];
            let abs_diff = (a - fd).abs();
            let rel = if abs_diff <= 1e-8 {
                0.0
            } else {
                abs_diff / a.abs().max(fd.abs()).max(1e-12)
            };
            if rel > max_rel {
                max_rel = rel;
            }
            checked += 1;
            if rel > tol {
                return Err(Error::numeric(
                    "gradcheck",
                    format!(
                        "param {pi} element {j}: analytic {a:.9e} vs fd {fd:.9e} (rel err {rel:.3e} > {tol:.1e})"
                    ),
                ));
            }
        }
    }
    Ok(GradCheckReport {
        max_rel_err: max_rel,
        elements_checked: checked,
    })
}
