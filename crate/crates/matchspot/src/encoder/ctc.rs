use crate::error::{Error, Result};
use crate::numerics::{Real, Tensor};

/// Log-space sentinel standing in for −inf. Chosen so that exp(sentinel − m)
/// underflows to exactly zero against any real score while every tensor
/// element stays finite.
fn neg_sentinel<T: Real>() -> T {
    T::from_f64(-1e30)
}

/// Elementwise log(exp(a−m) + exp(b−m) [+ exp(c−m)]) + m with m detached,
/// so gradients flow through the exp terms only.
fn logsumexp<T: Real>(terms: &[&Tensor<T>]) -> Result<Tensor<T>> {
    let mut m = terms[0].detach();
    for t in &terms[1..] {
        m = m.max_detached(t)?;
    }
    let mut sum: Option<Tensor<T>> = None;
    for t in terms {
        let e = t.sub(&m)?.exp()?;
        sum = Some(match sum {
            None => e,
            Some(s) => s.add(&e)?,
        });
    }
    sum.unwrap().log()?.add(&m)
}

/// Frames needed for any valid alignment: one per token plus one separator
/// blank between adjacent repeats.
fn min_frames(label: &[usize]) -> usize {
    let repeats = label.windows(2).filter(|w| w[0] == w[1]).count();
    label.len() + repeats
}

/// CTC loss: −log of the total probability over all valid alignments of
/// `label` in `log_probs` ([B, V+1] per-frame log-softmax scores, blank at
/// index V), computed by the forward (alpha) recursion in log space. The
/// result stays on the tape and is differentiable.
///
/// A label too long to align (|label| plus required separator blanks exceeds
/// B) yields +inf loss rather than an error.
pub fn ctc_loss<T: Real>(log_probs: &Tensor<T>, label: &[usize]) -> Result<Tensor<T>> {
    if log_probs.shape().len() != 2 {
        return Err(Error::shape("ctc_loss", format!("log_probs must be 2-d, got {:?}", log_probs.shape())));
    }
    let (frames, vocab_with_blank) = log_probs.dims2();
    if vocab_with_blank < 2 {
        return Err(Error::shape("ctc_loss", "need at least one symbol plus blank"));
    }
    let blank = vocab_with_blank - 1;
    if let Some(&bad) = label.iter().find(|&&t| t >= blank) {
        return Err(Error::Input(format!("label token {bad} out of range (blank = {blank})")));
    }
    if label.is_empty() {
        return Err(Error::Input("empty CTC label".to_string()));
    }
    if min_frames(label) > frames {
        return Ok(Tensor::constant(vec![1], vec![T::infinity()])?);
    }

    // extended label with blanks: ∅ l1 ∅ l2 ∅ ... ∅
    let ext: Vec<usize> = std::iter::once(blank)
        .chain(label.iter().flat_map(|&t| [t, blank]))
        .collect();
    let states = ext.len();
    let neg = neg_sentinel::<T>();

    // gather matrix: [V+1, states], one-hot by extended symbol
    let mut g = vec![T::zero(); vocab_with_blank * states];
    for (s, &sym) in ext.iter().enumerate() {
        g[sym * states + s] = T::one();
    }
    let gather = Tensor::constant(vec![vocab_with_blank, states], g)?;

    // skip transitions allowed where the symbol differs from both blank and
    // the symbol two states back
    let mut skip_mask = vec![T::zero(); states];
    let mut skip_neg = vec![neg; states];
    for s in 2..states {
        if ext[s] != blank && ext[s] != ext[s - 2] {
            skip_mask[s] = T::one();
            skip_neg[s] = T::zero();
        }
    }
    let skip_mask = Tensor::constant(vec![1, states], skip_mask)?;
    let skip_neg = Tensor::constant(vec![1, states], skip_neg)?;

    let scores_at = |t: usize| -> Result<Tensor<T>> {
        log_probs.narrow(0, t, 1)?.matmul(&gather)
    };

    // alpha_0: states 0 and 1 start, the rest are impossible
    let mut init = vec![neg; states];
    init[0] = T::zero();
    if states > 1 {
        init[1] = T::zero();
    }
    let init = Tensor::constant(vec![1, states], init)?;
    let mut alpha = scores_at(0)?.add(&init)?;

    let neg_one = Tensor::constant(vec![1, 1], vec![neg])?;
    let neg_two = Tensor::constant(vec![1, 2], vec![neg, neg])?;
    for t in 1..frames {
        let stay = &alpha;
        let step = neg_one.concat(&alpha.narrow(1, 0, states - 1)?, 1)?;
        let next = if states > 2 {
            let skip_raw = neg_two.concat(&alpha.narrow(1, 0, states - 2)?, 1)?;
            let skip = skip_raw.mul(&skip_mask)?.add(&skip_neg)?;
            logsumexp(&[stay, &step, &skip])?
        } else {
            logsumexp(&[stay, &step])?
        };
        alpha = next.add(&scores_at(t)?)?;
    }

    let last = alpha.narrow(1, states - 1, 1)?;
    let total = if states >= 2 {
        let second_last = alpha.narrow(1, states - 2, 1)?;
        logsumexp(&[&last, &second_last])?
    } else {
        last
    };
    Ok(total.neg().reshape(vec![1])?)
}

/// Greedy CTC decoding: per-frame argmax, collapse repeats, drop blanks.
pub fn greedy_decode<T: Real>(log_probs: &Tensor<T>) -> Vec<usize> {
    let (frames, vocab_with_blank) = log_probs.dims2();
    let blank = vocab_with_blank - 1;
    let d = log_probs.to_vec();
    let mut out = Vec::new();
    let mut prev = usize::MAX;
    for t in 0..frames {
        let row = &d[t * vocab_with_blank..(t + 1) * vocab_with_blank];
        let arg = row
            .iter()
            .enumerate()
            .max_by(|(_, a), (_, b)| a.partial_cmp(b).unwrap())
            .map(|(i, _)| i)
            .unwrap();
        if arg != prev && arg != blank {
            out.push(arg);
        }
        prev = arg;
    }
    out
}

/// Brute-force oracle: enumerate every frame-label path, keep the ones that
/// collapse to `label`, and sum their probabilities directly. Exponential in
/// B — test support for B ≤ 5 style cases only.
pub fn ctc_loss_by_enumeration(log_probs: &[Vec<f64>], label: &[usize]) -> f64 {
    let frames = log_probs.len();
    let vocab_with_blank = log_probs[0].len();
    let blank = vocab_with_blank - 1;
    fn collapse(path: &[usize], blank: usize) -> Vec<usize> {
        let mut out = Vec::new();
        let mut prev = usize::MAX;
        for &p in path {
            if p != prev && p != blank {
                out.push(p);
            }
            prev = p;
        }
        out
    }
    let n_paths = (vocab_with_blank as u64).pow(frames as u32);
    let mut total = 0.0f64;
    let mut path = vec![0usize; frames];
    for idx in 0..n_paths {
        let mut rem = idx;
        for slot in path.iter_mut() {
            *slot = (rem % vocab_with_blank as u64) as usize;
            rem /= vocab_with_blank as u64;
        }
        if collapse(&path, blank) == label {
            let logp: f64 = path.iter().enumerate().map(|(t, &v)| log_probs[t][v]).sum();
            total += logp.exp();
        }
    }
    -total.ln()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn log_softmax_rows_f64(raw: &[Vec<f64>]) -> Vec<Vec<f64>> {
        raw.iter()
            .map(|row| {
                let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let lse = m + row.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
                row.iter().map(|v| v - lse).collect()
            })
            .collect()
    }

    fn tensor_of(rows: &[Vec<f64>]) -> Tensor<f64> {
        let r = rows.len();
        let c = rows[0].len();
        Tensor::constant(vec![r, c], rows.iter().flatten().copied().collect()).unwrap()
    }

    #[test]
    fn single_frame_uniform_two_symbols() {
        // B=1, label=[a], uniform over {a, blank} → p = 0.5
        let lp = vec![vec![0.5f64.ln(), 0.5f64.ln()]];
        let loss = ctc_loss(&tensor_of(&lp), &[0]).unwrap().value();
        assert!((loss - (-0.5f64.ln())).abs() < 1e-12);
    }

    #[test]
    fn two_frames_alignment_enumeration() {
        // B=2, label=[a], all frame probs 0.5 → alignments {aa, a·, ·a}, p=0.75
        let lp = vec![vec![0.5f64.ln(), 0.5f64.ln()]; 2];
        let loss = ctc_loss(&tensor_of(&lp), &[0]).unwrap().value();
        assert!((loss - (-0.75f64.ln())).abs() < 1e-12);
    }

    #[test]
    fn impossible_label_gives_infinite_loss() {
        let lp = vec![vec![0.5f64.ln(), 0.5f64.ln()]; 2];
        let loss = ctc_loss(&tensor_of(&lp), &[0, 0, 0]).unwrap().value();
        assert!(loss.is_infinite() && loss > 0.0);
        // repeats need separator blanks: label aa in 2 frames is impossible
        let loss = ctc_loss(&tensor_of(&lp), &[0, 0]).unwrap().value();
        assert!(loss.is_infinite());
    }

    #[test]
    fn matches_enumeration_on_random_cases() {
        let mut rng = ChaCha8Rng::seed_from_u64(1234);
        for case in 0..200 {
            let frames = rng.gen_range(1..=5);
            let vocab = rng.gen_range(1..=3); // plus blank
            let label_len = rng.gen_range(1..=3);
            let label: Vec<usize> = (0..label_len).map(|_| rng.gen_range(0..vocab)).collect();
            let raw: Vec<Vec<f64>> = (0..frames)
                .map(|_| (0..=vocab).map(|_| rng.gen::<f64>() * 4.0 - 2.0).collect())
                .collect();
            let lp = log_softmax_rows_f64(&raw);
            let fast = ctc_loss(&tensor_of(&lp), &label).unwrap().value();
            let slow = ctc_loss_by_enumeration(&lp, &label);
            if slow.is_infinite() {
                assert!(fast.is_infinite(), "case {case}: fast {fast} vs inf");
            } else {
                assert!((fast - slow).abs() < 1e-8, "case {case}: {fast} vs {slow}");
            }
        }
    }

    #[test]
    fn gradient_passes_finite_difference() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let raw: Vec<f64> = (0..5 * 4).map(|_| rng.gen::<f64>() * 2.0 - 1.0).collect();
        let logits = Tensor::param(vec![5, 4], raw).unwrap();
        let label = vec![0usize, 2, 1];
        let forward = || -> crate::Result<Tensor<f64>> {
            ctc_loss(&logits.log_softmax_rows()?, &label)
        };
        let report =
            crate::numerics::gradcheck::check_gradients(&[logits.clone()], forward, 1e-6, 1e-4)
                .unwrap();
        assert!(report.max_rel_err <= 1e-4);
    }

    #[test]
    fn greedy_decode_collapses() {
        // argmax path: a a ∅ b b ∅ a → "ab a" = [0, 1, 0]
        let rows: [[f64; 3]; 7] = [
            [0.9, 0.05, 0.05],
            [0.9, 0.05, 0.05],
            [0.05, 0.05, 0.9],
            [0.05, 0.9, 0.05],
            [0.05, 0.9, 0.05],
            [0.05, 0.05, 0.9],
            [0.9, 0.05, 0.05],
        ];
        let lp: Vec<Vec<f64>> = rows.iter().map(|r| r.iter().map(|v| v.ln()).collect()).collect();
        assert_eq!(greedy_decode(&tensor_of(&lp)), vec![0, 1, 0]);
    }

    #[test]
    fn rejects_bad_tokens() {
        let lp = vec![vec![0.5f64.ln(), 0.5f64.ln()]; 2];
        assert!(ctc_loss(&tensor_of(&lp), &[1]).is_err()); // 1 is the blank here
        assert!(ctc_loss(&tensor_of(&lp), &[]).is_err());
    }
}
