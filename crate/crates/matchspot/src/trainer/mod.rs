//! End-to-end BCE training of the hypernetwork and detector (speech encoder
//! optionally frozen or fine-tuned), with validation-loss early stopping,
//! checkpointing, and seeded determinism.

mod checkpoint;

pub use checkpoint::{
    load_checkpoint, require_fingerprint, save_checkpoint, Checkpoint, CheckpointKind,
    CheckpointMeta,
};

use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::{build_pairs, load_entry_audio, BatchMode, ExamplePair, ManifestEntry};
use crate::detector::{Detector, PerceiverConfig};
use crate::encoder::{ConformerEncoder, EncoderConfig};
use crate::error::{Error, Result};
use crate::frontend::{MelExtractor, MelSpectrogram};
use crate::hypernet::{Hypernet, HypernetConfig};
use crate::nn::ParamSet;
use crate::numerics::{AdamState, Real, Tensor};

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub lr: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub patience: usize,
    pub freeze_encoder: bool,
    pub seed: u64,
}

impl TrainConfig {
    /// Published recipe: BCE for up to 250 epochs, patience 40, Adam 1e-4,
    /// batch 96.
    pub fn paper() -> Self {
        TrainConfig {
            lr: 1e-4,
            batch_size: 96,
            max_epochs: 250,
            patience: 40,
            freeze_encoder: false,
            seed: 0,
        }
    }

    pub fn desk() -> Self {
        TrainConfig {
            lr: 1e-3,
            batch_size: 16,
            max_epochs: 75,
            patience: 74,
            freeze_encoder: false,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.lr <= 0.0 {
            return Err(Error::Config("learning rate must be positive".to_string()));
        }
        if self.patience >= self.max_epochs {
            return Err(Error::Config(format!(
                "patience {} must be below max_epochs {}",
                self.patience, self.max_epochs
            )));
        }
        if self.batch_size < 2 || self.batch_size % 2 != 0 {
            return Err(Error::Config("batch size must be an even number >= 2".to_string()));
        }
        Ok(())
    }
}

/// Mean binary cross-entropy over a probability vector. Probabilities are
/// clamped to [1e-7, 1−1e-7] before the logs so single precision stays
/// finite.
pub fn bce_loss<T: Real>(probs: &Tensor<T>, labels: &Tensor<T>) -> Result<Tensor<T>> {
    if probs.shape() != labels.shape() || probs.shape().len() != 1 {
        return Err(Error::shape(
            "bce_loss",
            format!("want matching 1-d shapes, got {:?} vs {:?}", probs.shape(), labels.shape()),
        ));
    }
    let n = probs.numel();
    let eps = T::from_f64(1e-7);
    let p = probs.clamp(eps, T::one() - eps);
    let pos = labels.mul(&p.log()?)?;
    let neg_labels = labels.neg().add_scalar(T::one());
    let neg = neg_labels.mul(&p.neg().add_scalar(T::one()).log()?)?;
    Ok(pos.add(&neg)?.sum_all().mul_scalar(-T::one() / T::from_f64(n as f64)))
}

/// The three trainable submodels plus their configs.
pub struct KwsModel<T: Real> {
    pub encoder: ConformerEncoder<T>,
    pub hypernet: Hypernet<T>,
    pub detector: Detector<T>,
}

impl<T: Real> KwsModel<T> {
    pub fn init(
        encoder_cfg: &EncoderConfig,
        hypernet_cfg: &HypernetConfig,
        perceiver_cfg: &PerceiverConfig,
        seed: u64,
    ) -> Result<Self> {
        if hypernet_cfg.channels != perceiver_cfg.proj_dim {
            return Err(Error::Config(format!(
                "hypernet channels {} must equal detector proj_dim {}",
                hypernet_cfg.channels, perceiver_cfg.proj_dim
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Ok(KwsModel {
            encoder: ConformerEncoder::init(encoder_cfg, &mut rng)?,
            hypernet: Hypernet::init(hypernet_cfg, &mut rng)?,
            detector: Detector::init(perceiver_cfg, encoder_cfg.model_dim, &mut rng)?,
        })
    }

    pub fn meta(&self, kind: CheckpointKind) -> CheckpointMeta {
        CheckpointMeta {
            kind,
            encoder: self.encoder.config().clone(),
            hypernet: Some(self.hypernet.config().clone()),
            perceiver: Some(self.detector.config().clone()),
        }
    }

    pub fn encoder_params(&self) -> ParamSet<T> {
        let mut set = ParamSet::new();
        self.encoder.collect("encoder", &mut set);
        set
    }

    pub fn trainable_params(&self, freeze_encoder: bool) -> ParamSet<T> {
        let mut set = ParamSet::new();
        if !freeze_encoder {
            self.encoder.collect("encoder", &mut set);
        }
        self.hypernet.collect("hypernet", &mut set);
        self.detector.collect("detector", &mut set);
        set
    }

    pub fn all_params(&self) -> ParamSet<T> {
        self.trainable_params(false)
    }
}

#[derive(Debug, Clone)]
pub struct EpochStats {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub elapsed_s: f64,
}

pub struct TrainOutcome<T: Real> {
    pub model: KwsModel<T>,
    pub adam: AdamState<T>,
    /// Which parameters the optimizer state covers.
    pub freeze_encoder: bool,
    pub history: Vec<EpochStats>,
    pub best_epoch: usize,
    pub best_val_loss: f64,
}

/// Epoch-mean training loss plus per-epoch validation loss drive early
/// stopping; the best-validation parameter snapshot is restored at the end.
pub fn train(
    train_entries: &[ManifestEntry],
    val_entries: &[ManifestEntry],
    encoder_cfg: &EncoderConfig,
    hypernet_cfg: &HypernetConfig,
    perceiver_cfg: &PerceiverConfig,
    config: &TrainConfig,
) -> Result<TrainOutcome<f32>> {
    config.validate()?;
    let model = KwsModel::<f32>::init(encoder_cfg, hypernet_cfg, perceiver_cfg, config.seed)?;
    train_from(model, train_entries, val_entries, config)
}

/// Same loop starting from an existing model (fine-tuning; Adam state is
/// reinitialized).
pub fn train_from(
    model: KwsModel<f32>,
    train_entries: &[ManifestEntry],
    val_entries: &[ManifestEntry],
    config: &TrainConfig,
) -> Result<TrainOutcome<f32>> {
    config.validate()?;
    if train_entries.len() < 2 || val_entries.is_empty() {
        return Err(Error::Input(
            "need at least two training entries and one validation entry".to_string(),
        ));
    }
    let started = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x7472_6169_6e00_0000); // "train"
    let extractor = MelExtractor::new();
    let train_mels = load_mels(&extractor, train_entries)?;
    let val_mels = load_mels(&extractor, val_entries)?;

    // frozen encoder: encode every clip once and train on detached features
    let frozen_train: Option<Vec<Tensor<f32>>> = if config.freeze_encoder {
        Some(
            train_mels
                .iter()
                .map(|mel| Ok(model.encoder.encode(mel)?.vectors.detach()))
                .collect::<Result<_>>()?,
        )
    } else {
        None
    };
    let frozen_val: Option<Vec<Tensor<f32>>> = if config.freeze_encoder {
        Some(
            val_mels
                .iter()
                .map(|mel| Ok(model.encoder.encode(mel)?.vectors.detach()))
                .collect::<Result<_>>()?,
        )
    } else {
        None
    };

    let trainable = model.trainable_params(config.freeze_encoder);
    let tensors = trainable.tensors();
    let mut adam = AdamState::new(&tensors, config.lr as f32);
    let val_pairs = crate::dataset::build_eval_pairs(val_entries)?;

    let mut history: Vec<EpochStats> = Vec::new();
    let mut best: Option<(usize, f64, Vec<Vec<f32>>)> = None;
    let all = model.all_params();
    let half = config.batch_size / 2;

    for epoch in 0..config.max_epochs {
        let mut order: Vec<usize> = (0..train_entries.len()).collect();
        for i in (1..order.len()).rev() {
            let j = rng.gen_range(0..=i);
            order.swap(i, j);
        }
        let mut epoch_losses = Vec::new();
        for chunk in order.chunks(half) {
            let pairs = build_pairs(train_entries, chunk, BatchMode::Train, &mut rng)?;
            trainable.zero_grads();
            let loss = batch_loss(&model, &pairs, &train_mels, frozen_train.as_deref())?;
            let loss_value = loss.value() as f64;
            if !loss_value.is_finite() {
                return Err(Error::Divergence(format!(
                    "training loss became {loss_value} at epoch {epoch}"
                )));
            }
            loss.backward()?;
            adam.step(&tensors)?;
            epoch_losses.push(loss_value);
        }
        let train_loss = epoch_losses.iter().sum::<f64>() / epoch_losses.len().max(1) as f64;
        let val_loss_t = batch_loss(&model, &val_pairs, &val_mels, frozen_val.as_deref())?;
        let val_loss = val_loss_t.value() as f64;
        if !val_loss.is_finite() {
            return Err(Error::Divergence(format!("validation loss became {val_loss}")));
        }
        history.push(EpochStats {
            epoch,
            train_loss,
            val_loss,
            elapsed_s: started.elapsed().as_secs_f64(),
        });
        let improved = best.as_ref().map_or(true, |(_, b, _)| val_loss < *b);
        if improved {
            best = Some((epoch, val_loss, snapshot(&all)));
        }
        let best_epoch = best.as_ref().unwrap().0;
        if epoch - best_epoch >= config.patience {
            break;
        }
    }

    let (best_epoch, best_val_loss, data) = best.unwrap();
    restore(&all, &data);
    Ok(TrainOutcome {
        model,
        adam,
        freeze_encoder: config.freeze_encoder,
        history,
        best_epoch,
        best_val_loss,
    })
}

fn load_mels(extractor: &MelExtractor, entries: &[ManifestEntry]) -> Result<Vec<MelSpectrogram>> {
    entries
        .iter()
        .map(|e| extractor.extract(&load_entry_audio(e)?))
        .collect()
}

/// Forward a set of pairs and reduce with BCE. Each distinct clip in the set
/// is encoded once; its positive and negative share the encoding.
fn batch_loss(
    model: &KwsModel<f32>,
    pairs: &[ExamplePair],
    mels: &[MelSpectrogram],
    frozen: Option<&[Tensor<f32>]>,
) -> Result<Tensor<f32>> {
    let mut encoded: Vec<Option<Tensor<f32>>> = vec![None; mels.len()];
    let mut probs: Option<Tensor<f32>> = None;
    let mut labels = Vec::with_capacity(pairs.len());
    for pair in pairs {
        let idx = pair.entry_index;
        if encoded[idx].is_none() {
            encoded[idx] = Some(match frozen {
                Some(cache) => cache[idx].clone(),
                None => model.encoder.encode(&mels[idx])?.vectors,
            });
        }
        let z = encoded[idx].as_ref().unwrap();
        let weights = model.hypernet.generate(&pair.keyword)?;
        let (prob, _) = model.detector.forward(z, &weights)?;
        labels.push(pair.label as f32);
        probs = Some(match probs {
            None => prob,
            Some(p) => p.concat(&prob, 0)?,
        });
    }
    let probs = probs.ok_or_else(|| Error::Input("empty batch".to_string()))?;
    let labels = Tensor::constant(vec![labels.len()], labels)?;
    bce_loss(&probs, &labels)
}

fn snapshot(params: &ParamSet<f32>) -> Vec<Vec<f32>> {
    params.iter().map(|(_, t)| t.to_vec()).collect()
}

fn restore(params: &ParamSet<f32>, data: &[Vec<f32>]) {
    for ((_, t), d) in params.iter().zip(data) {
        t.write_data(|v| v.copy_from_slice(d));
    }
}

/// Score every pair of an evaluation set with a trained model. Detections
/// fan out across worker threads; results land in input order.
pub fn score_pairs(
    model: &KwsModel<f32>,
    pairs: &[ExamplePair],
    mels: &[MelSpectrogram],
) -> Result<Vec<f64>> {
    let n_threads = std::thread::available_parallelism().map_or(1, |n| n.get()).min(8);
    let chunk = pairs.len().div_ceil(n_threads).max(1);
    let mut scores = vec![0.0f64; pairs.len()];
    std::thread::scope(|scope| -> Result<()> {
        let mut handles = Vec::new();
        for (pair_chunk, out_chunk) in pairs.chunks(chunk).zip(scores.chunks_mut(chunk)) {
            handles.push(scope.spawn(move || -> Result<()> {
                for (pair, out) in pair_chunk.iter().zip(out_chunk.iter_mut()) {
                    let z = model.encoder.encode(&mels[pair.entry_index])?;
                    let w = model.hypernet.generate(&pair.keyword)?;
                    let (prob, _) = model.detector.forward(&z.vectors, &w)?;
                    *out = prob.value() as f64;
                }
                Ok(())
            }));
        }
        for h in handles {
            h.join().expect("scoring thread panicked")?;
        }
        Ok(())
    })?;
    Ok(scores)
}

/// CSV training log: epoch, train_loss, val_loss, elapsed_s.
pub fn write_train_log(path: &std::path::Path, history: &[EpochStats]) -> Result<()> {
    use std::io::Write;
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = std::io::BufWriter::new(file);
    writeln!(w, "epoch,train_loss,val_loss,elapsed_s").map_err(|e| Error::io(path, e))?;
    for s in history {
        writeln!(w, "{},{:.9e},{:.9e},{:.3}", s.epoch, s.train_loss, s.val_loss, s.elapsed_s)
            .map_err(|e| Error::io(path, e))?;
    }
    Ok(())
}
