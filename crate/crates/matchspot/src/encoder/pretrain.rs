use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{ctc_loss, ConformerEncoder, EncoderConfig};
use crate::dataset::{load_entry_audio, ManifestEntry};
use crate::error::{Error, Result};
use crate::frontend::MelExtractor;
use crate::hypernet::{char_index, CHARSET_SIZE};
use crate::nn::{Linear, ParamSet};
use crate::numerics::{AdamState, Tensor};

#[derive(Debug, Clone)]
pub struct CtcTrainConfig {
    pub epochs: usize,
    pub lr: f64,
    pub batch_size: usize,
    pub seed: u64,
}

impl CtcTrainConfig {
    /// Published recipe: 250 epochs, Adam at 1e-4, batch 96.
    pub fn paper() -> Self {
        CtcTrainConfig {
            epochs: 250,
            lr: 1e-4,
            batch_size: 96,
            seed: 0,
        }
    }

    pub fn desk() -> Self {
        CtcTrainConfig {
            epochs: 5,
            lr: 1e-3,
            batch_size: 8,
            seed: 0,
        }
    }
}

pub struct CtcPretrainOutcome {
    pub encoder: ConformerEncoder<f32>,
    /// Linear CTC head over characters + blank; used for pretraining only and
    /// dropped from checkpoints.
    pub head: Linear<f32>,
    /// Mean batch loss per optimizer step.
    pub step_losses: Vec<f64>,
}

fn transcript_labels(entry: &ManifestEntry) -> Result<Vec<usize>> {
    let normalized = entry.text.to_lowercase();
    let normalized = normalized.split_whitespace().collect::<Vec<_>>().join(" ");
    normalized
        .chars()
        .map(|c| {
            char_index(c).ok_or_else(|| {
                Error::Input(format!(
                    "transcript {:?} has character {c:?} outside the CTC charset",
                    entry.text
                ))
            })
        })
        .collect()
}

/// Pretrain the encoder with CTC over characters. The caller persists the
/// encoder and discards the head.
pub fn pretrain_ctc(
    entries: &[ManifestEntry],
    config: &EncoderConfig,
    hyper: &CtcTrainConfig,
) -> Result<CtcPretrainOutcome> {
    if entries.is_empty() {
        return Err(Error::Input("CTC pretraining needs a nonempty manifest".to_string()));
    }
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(hyper.seed);
    let encoder = ConformerEncoder::<f32>::init(config, &mut rng)?;
    let head = Linear::new(config.model_dim, CHARSET_SIZE + 1, &mut rng);

    let extractor = MelExtractor::new();
    let mut mels = Vec::with_capacity(entries.len());
    let mut labels = Vec::with_capacity(entries.len());
    for entry in entries {
        let clip = load_entry_audio(entry)?;
        mels.push(extractor.extract(&clip)?);
        labels.push(transcript_labels(entry)?);
    }

    let mut params = ParamSet::new();
    encoder.collect("encoder", &mut params);
    head.collect("ctc_head", &mut params);
    let tensors = params.tensors();
    let mut adam = AdamState::new(&tensors, hyper.lr as f32);

    let mut step_losses = Vec::new();
    for _epoch in 0..hyper.epochs {
        let mut order: Vec<usize> = (0..entries.len()).collect();
        for i in (1..order.len()).rev() {
            let j = rng.gen_range(0..=i);
            order.swap(i, j);
        }
        for chunk in order.chunks(hyper.batch_size) {
            params.zero_grads();
            let mut total: Option<Tensor<f32>> = None;
            let mut counted = 0usize;
            for &idx in chunk {
                let encoded = encoder.encode(&mels[idx])?;
                let log_probs = head.forward(&encoded.vectors)?.log_softmax_rows()?;
                let loss = ctc_loss(&log_probs, &labels[idx])?;
                if loss.value().is_infinite() {
                    // label cannot align within the frame budget; skip
                    continue;
                }
                counted += 1;
                total = Some(match total {
                    None => loss,
                    Some(t) => t.add(&loss)?,
                });
            }
            let Some(total) = total else { continue };
            let mean = total.mul_scalar(1.0 / counted as f32);
            let loss_value = mean.value() as f64;
            if !loss_value.is_finite() {
                return Err(Error::Divergence(format!("CTC loss became {loss_value}")));
            }
            mean.backward()?;
            adam.step(&tensors)?;
            step_losses.push(loss_value);
        }
    }
    Ok(CtcPretrainOutcome {
        encoder,
        head,
        step_losses,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{generate_corpus, SynthSpec};
    use crate::encoder::greedy_decode;
    use crate::hypernet::CHARSET;

    fn tiny_encoder_config() -> EncoderConfig {
        EncoderConfig {
            n_layers: 1,
            n_heads: 2,
            model_dim: 16,
            conv_kernel: 3,
            subsample_factor: 4,
            ff_expansion: 2,
        }
    }

    #[test]
    fn empty_manifest_rejected() {
        assert!(pretrain_ctc(&[], &tiny_encoder_config(), &CtcTrainConfig::desk()).is_err());
    }

    #[test]
    fn loss_decreases_over_first_steps() {
        let dir = tempfile::tempdir().unwrap();
        let spec = SynthSpec {
            train_clips: 8,
            val_clips: 1,
            holdout_clips: 0,
            holdout_keywords: 0,
            min_words: 1,
            max_words: 2,
            seed: 5,
            ..SynthSpec::default()
        };
        let corpus = generate_corpus(dir.path(), &spec).unwrap();
        let hyper = CtcTrainConfig {
            epochs: 6,
            lr: 1e-3,
            batch_size: 4,
            seed: 1,
        };
        let outcome = pretrain_ctc(&corpus.train, &tiny_encoder_config(), &hyper).unwrap();
        assert!(outcome.step_losses.len() >= 10);
        let head_mean: f64 = outcome.step_losses[..3].iter().sum::<f64>() / 3.0;
        let tail_mean: f64 = outcome.step_losses[outcome.step_losses.len() - 3..]
            .iter()
            .sum::<f64>()
            / 3.0;
        assert!(
            tail_mean < head_mean,
            "loss did not decrease: head {head_mean} tail {tail_mean}"
        );
    }

    #[test]
    fn overfit_single_utterance_decodes_transcript() {
        let dir = tempfile::tempdir().unwrap();
        let spec = SynthSpec {
            train_clips: 1,
            val_clips: 1,
            holdout_clips: 0,
            holdout_keywords: 0,
            min_words: 1,
            max_words: 1,
            seed: 2,
            ..SynthSpec::default()
        };
        let corpus = generate_corpus(dir.path(), &spec).unwrap();
        let hyper = CtcTrainConfig {
            epochs: 400,
            lr: 3e-3,
            batch_size: 1,
            seed: 3,
        };
        let outcome = pretrain_ctc(&corpus.train, &tiny_encoder_config(), &hyper).unwrap();
        let entry = &corpus.train[0];
        let clip = load_entry_audio(entry).unwrap();
        let mel = MelExtractor::new().extract(&clip).unwrap();
        let encoded = outcome.encoder.encode(&mel).unwrap();
        let log_probs = outcome.head.forward(&encoded.vectors).unwrap().log_softmax_rows().unwrap();
        let decoded: String = greedy_decode(&log_probs)
            .into_iter()
            .map(|i| CHARSET.chars().nth(i).unwrap())
            .collect();
        assert_eq!(decoded, entry.text);
    }
}
