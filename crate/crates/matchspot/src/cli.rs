//! Command-line surface. Every command is deterministic given --seed; file
//! formats are documented in the long help text.
//!
//! Exit codes: 0 success (detect: keyword present), 1 detect: keyword absent,
//! 2 usage/config error, 3 I/O or file-format error, 4 numerical divergence.

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::{
    build_eval_pairs, generate_corpus, load_entry_audio, load_manifest, Provenance,
    SynthSpec,
};
use crate::detector::{export_attention, Detector, PerceiverConfig};
use crate::encoder::{pretrain_ctc, read_features, ConformerEncoder, CtcTrainConfig, EncoderConfig};
use crate::error::{Error, Result};
use crate::frontend::{gen_noise, load_wav, mix_noise, write_wav, AudioClip, MelExtractor, NoiseKind};
use crate::hypernet::{read_filter, write_filter, HypernetConfig, Keyword, KeywordFilter};
use crate::metrics::{self, ScoreRecord, ScoredSet};
use crate::nn::ParamSet;
use crate::trainer::{
    load_checkpoint, require_fingerprint, save_checkpoint, train_from, write_train_log,
    Checkpoint, CheckpointKind, CheckpointMeta, KwsModel, TrainConfig,
};

const FORMAT_HELP: &str = "\
File formats:
  .hskw    keyword filter: magic HSKW0001 | u16 version | u16 kernel | u16 channels |
           u32 keyword-byte-length | UTF-8 keyword | channels*kernel f32 LE | CRC32
  .hsck    checkpoint: magic HSCK0001 | u32 meta-len | meta JSON | u64 fingerprint |
           u32 epoch | f64 val-loss | u64 adam-step | u32 n-records |
           (u32 name-len | name | u32 ndim | u32 dims | f32 data)* | CRC32
  .hsfeat  external features: magic HSFEAT01 | u32 B | u32 M | B*M f32 LE
  audio    RIFF WAV, PCM16 little-endian, mono, 16 kHz
  manifest JSON Lines: {\"audio\": ..., \"text\": ..., \"words\": [{\"w\",\"start\",\"end\"}]?}
  scores   CSV lines: clip_id,keyword,label,score";

#[derive(Parser)]
#[command(name = "matchspot", version, about = "Open-vocabulary keyword spotting with hyper-generated matched filters", after_long_help = FORMAT_HELP)]
pub struct Cli {
    #[command(subcommand)]
    command: Command,
}

/// Structured run configuration mirroring the model/training configs.
/// Unknown keys are rejected; command-line flags override fields.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default = "EncoderConfig::desk")]
    pub encoder: EncoderConfig,
    #[serde(default = "HypernetConfig::desk")]
    pub hypernet: HypernetConfig,
    #[serde(default = "PerceiverConfig::desk")]
    pub perceiver: PerceiverConfig,
    #[serde(default = "TrainConfig::desk")]
    pub train: TrainConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            encoder: EncoderConfig::desk(),
            hypernet: HypernetConfig::desk(),
            perceiver: PerceiverConfig::desk(),
            train: TrainConfig::desk(),
        }
    }
}

pub fn load_run_config(path: &Path) -> Result<RunConfig> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let config: RunConfig = serde_json::from_str(&text)
        .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
    config.encoder.validate()?;
    config.hypernet.validate()?;
    config.perceiver.validate()?;
    config.train.validate()?;
    Ok(config)
}

#[derive(Args)]
struct ConfigArgs {
    /// JSON run configuration; desk defaults when omitted
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override: rng seed
    #[arg(long)]
    seed: Option<u64>,
    /// Override: learning rate
    #[arg(long)]
    lr: Option<f64>,
    /// Override: batch size
    #[arg(long)]
    batch: Option<usize>,
    /// Override: maximum epochs
    #[arg(long)]
    epochs: Option<usize>,
    /// Override: early-stopping patience
    #[arg(long)]
    patience: Option<usize>,
    /// Override: keep the speech encoder frozen
    #[arg(long)]
    freeze_encoder: bool,
}

impl ConfigArgs {
    fn resolve(&self) -> Result<RunConfig> {
        let mut config = match &self.config {
            Some(path) => load_run_config(path)?,
            None => RunConfig::default(),
        };
        if let Some(seed) = self.seed {
            config.train.seed = seed;
        }
        if let Some(lr) = self.lr {
            config.train.lr = lr;
        }
        if let Some(batch) = self.batch {
            config.train.batch_size = batch;
        }
        if let Some(epochs) = self.epochs {
            config.train.max_epochs = epochs;
        }
        if let Some(patience) = self.patience {
            config.train.patience = patience;
        } else if config.train.patience >= config.train.max_epochs {
            // epochs lowered below the configured patience: disable stopping
            config.train.patience = config.train.max_epochs.saturating_sub(1);
        }
        if self.freeze_encoder {
            config.train.freeze_encoder = true;
        }
        config.train.validate()?;
        Ok(config)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Generate the deterministic synthetic tone-word corpus and manifests
    SynthCorpus {
        /// Output directory (wavs/ plus train/val/holdout JSONL)
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 32)]
        clips: usize,
        #[arg(long, default_value_t = 16)]
        val_clips: usize,
        #[arg(long, default_value_t = 16)]
        holdout_clips: usize,
        #[arg(long, default_value_t = 8)]
        keywords: usize,
        #[arg(long, default_value_t = 4)]
        holdout_keywords: usize,
    },
    /// Pretrain the Conformer encoder with CTC over characters
    PretrainCtc {
        #[arg(long)]
        manifest: PathBuf,
        /// Output checkpoint (.hsck, encoder only; the CTC head is discarded)
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        config: ConfigArgs,
    },
    /// Train hypernet + detector (and optionally the encoder) with BCE
    Train {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        val: PathBuf,
        /// Output checkpoint (.hsck, full model + optimizer state)
        #[arg(long)]
        out: PathBuf,
        /// Start the encoder from a pretraining checkpoint
        #[arg(long)]
        encoder_checkpoint: Option<PathBuf>,
        /// Training log CSV (epoch, train_loss, val_loss, elapsed_s)
        #[arg(long)]
        log: Option<PathBuf>,
        #[command(flatten)]
        config: ConfigArgs,
    },
    /// One extra epoch on new data starting from a full checkpoint
    Finetune {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        val: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        log: Option<PathBuf>,
        #[command(flatten)]
        config: ConfigArgs,
    },
    /// Generate a keyword's matched-filter weights offline (.hskw)
    GenWeights {
        #[arg(long)]
        keyword: String,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Score one clip against a filter file; exit 0 when detected
    Detect {
        /// Input WAV (mutually exclusive with --features)
        #[arg(long, conflicts_with = "features")]
        audio: Option<PathBuf>,
        /// Externally computed features (.hsfeat) instead of audio
        #[arg(long)]
        features: Option<PathBuf>,
        #[arg(long)]
        filter: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, default_value_t = 0.5)]
        threshold: f64,
    },
    /// Score a manifest's deterministic eval pairs and report metrics
    Evaluate {
        #[arg(long, conflicts_with = "scores_in")]
        manifest: Option<PathBuf>,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Compute metrics from an existing score CSV instead of a model
        #[arg(long)]
        scores_in: Option<PathBuf>,
        /// Metric report CSV (subset, metric, value)
        #[arg(long)]
        metrics: PathBuf,
        /// ROC sweep points CSV
        #[arg(long)]
        roc: Option<PathBuf>,
        /// Score CSV output (clip_id, keyword, label, score)
        #[arg(long)]
        scores: Option<PathBuf>,
        /// Mix noise into every clip at this SNR (dB) before scoring
        #[arg(long)]
        snr: Option<f64>,
        /// Noise source: "white", "pub", or a WAV path
        #[arg(long, default_value = "white")]
        noise: String,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Export one layer's cross-attention as CSV + PGM heatmap
    ExportAttention {
        #[arg(long)]
        audio: PathBuf,
        #[arg(long)]
        filter: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, default_value_t = 0)]
        layer: usize,
        /// Base output path; writes <out>.csv and <out>.pgm
        #[arg(long)]
        out: PathBuf,
    },
    /// Mix noise into a clip at an exact SNR
    MixNoise {
        #[arg(long)]
        clean: PathBuf,
        /// "white", "pub", or a WAV path
        #[arg(long, default_value = "white")]
        noise: String,
        /// Babble sources for pub-like noise (a manifest)
        #[arg(long)]
        babble_from: Option<PathBuf>,
        #[arg(long)]
        snr: f64,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

/// Parse argv and run. Returns the process exit code.
pub fn run() -> i32 {
    let cli = Cli::parse();
    match dispatch(cli.command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn dispatch(command: Command) -> Result<i32> {
    match command {
        Command::SynthCorpus {
            out,
            seed,
            clips,
            val_clips,
            holdout_clips,
            keywords,
            holdout_keywords,
        } => {
            let spec = SynthSpec {
                train_clips: clips,
                val_clips,
                holdout_clips,
                train_keywords: keywords,
                holdout_keywords,
                seed,
                ..SynthSpec::default()
            };
            let corpus = generate_corpus(&out, &spec)?;
            println!(
                "wrote {} train / {} val / {} holdout clips under {}",
                corpus.train.len(),
                corpus.val.len(),
                corpus.holdout.len(),
                out.display()
            );
            println!("train keywords: {}", corpus.train_vocab.join(" "));
            println!("holdout keywords: {}", corpus.holdout_vocab.join(" "));
            Ok(0)
        }
        Command::PretrainCtc { manifest, out, config } => {
            let run = config.resolve()?;
            let entries = load_manifest(&manifest)?;
            let hyper = CtcTrainConfig {
                epochs: run.train.max_epochs,
                lr: run.train.lr,
                batch_size: run.train.batch_size,
                seed: run.train.seed,
            };
            let outcome = pretrain_ctc(&entries, &run.encoder, &hyper)?;
            let first = outcome.step_losses.first().copied().unwrap_or(f64::NAN);
            let last = outcome.step_losses.last().copied().unwrap_or(f64::NAN);
            let mut params = ParamSet::new();
            outcome.encoder.collect("encoder", &mut params);
            let mut ck = Checkpoint {
                meta: CheckpointMeta {
                    kind: CheckpointKind::Encoder,
                    encoder: run.encoder.clone(),
                    hypernet: None,
                    perceiver: None,
                },
                epoch: run.train.max_epochs as u32,
                val_loss: last,
                adam_step: 0,
                records: Vec::new(),
            };
            ck.push_params(&params);
            save_checkpoint(&out, &ck)?;
            println!(
                "pretrained {} steps, CTC loss {first:.4} -> {last:.4}, wrote {}",
                outcome.step_losses.len(),
                out.display()
            );
            Ok(0)
        }
        Command::Train {
            manifest,
            val,
            out,
            encoder_checkpoint,
            log,
            config,
        } => {
            let run = config.resolve()?;
            let train_entries = load_manifest(&manifest)?;
            let val_entries = load_manifest(&val)?;
            let model =
                KwsModel::<f32>::init(&run.encoder, &run.hypernet, &run.perceiver, run.train.seed)?;
            if let Some(enc_ck_path) = encoder_checkpoint {
                let enc_ck = load_checkpoint(&enc_ck_path)?;
                let expected = CheckpointMeta {
                    kind: CheckpointKind::Encoder,
                    encoder: run.encoder.clone(),
                    hypernet: None,
                    perceiver: None,
                };
                require_fingerprint(&enc_ck, &expected, &enc_ck_path)?;
                enc_ck.load_into(&model.encoder_params(), &enc_ck_path)?;
            }
            let outcome = train_from(model, &train_entries, &val_entries, &run.train)?;
            if let Some(log_path) = log {
                write_train_log(&log_path, &outcome.history)?;
            }
            write_full_checkpoint(&out, &outcome)?;
            println!(
                "trained {} epochs (best epoch {}, val loss {:.6}), wrote {}",
                outcome.history.len(),
                outcome.best_epoch,
                outcome.best_val_loss,
                out.display()
            );
            Ok(0)
        }
        Command::Finetune {
            manifest,
            val,
            checkpoint,
            out,
            log,
            config,
        } => {
            let mut run = config.resolve()?;
            let ck = load_checkpoint(&checkpoint)?;
            let (model, meta) = model_from_checkpoint(&ck, &checkpoint)?;
            run.encoder = meta.encoder.clone();
            // one extra epoch, fresh optimizer state
            run.train.max_epochs = 1;
            run.train.patience = 0;
            let train_entries = load_manifest(&manifest)?;
            let val_entries = load_manifest(&val)?;
            let outcome = train_from(model, &train_entries, &val_entries, &run.train)?;
            if let Some(log_path) = log {
                write_train_log(&log_path, &outcome.history)?;
            }
            write_full_checkpoint(&out, &outcome)?;
            println!(
                "fine-tuned one epoch (val loss {:.6}), wrote {}",
                outcome.best_val_loss,
                out.display()
            );
            Ok(0)
        }
        Command::GenWeights { keyword, checkpoint, out } => {
            let keyword = Keyword::new(&keyword)?;
            let ck = load_checkpoint(&checkpoint)?;
            let (model, _) = model_from_checkpoint(&ck, &checkpoint)?;
            let weights = model.hypernet.generate(&keyword)?;
            let filter = KeywordFilter::from_tensor(&keyword, &weights.detach());
            write_filter(&out, &filter)?;
            println!(
                "wrote {} ({}x{} weights for {:?})",
                out.display(),
                filter.channels,
                filter.kernel,
                keyword.text()
            );
            Ok(0)
        }
        Command::Detect {
            audio,
            features,
            filter,
            checkpoint,
            threshold,
        } => {
            let filter = read_filter(&filter)?;
            let ck = load_checkpoint(&checkpoint)?;
            let (encoder, detector) = deployment_from_checkpoint(&ck, &checkpoint)?;
            let z = match (&audio, &features) {
                (Some(wav), None) => encoder.encode(&MelExtractor::new().extract(&load_wav(wav)?)?)?,
                (None, Some(feat)) => read_features(feat, 20.0)?,
                _ => {
                    return Err(Error::Input(
                        "detect needs exactly one of --audio or --features".to_string(),
                    ))
                }
            };
            let output = detector.detect(&z, &filter.to_tensor())?;
            println!("{:.6}", output.probability);
            Ok(if output.probability >= threshold { 0 } else { 1 })
        }
        Command::Evaluate {
            manifest,
            checkpoint,
            scores_in,
            metrics: metrics_out,
            roc,
            scores,
            snr,
            noise,
            seed,
        } => {
            let (records, provenances) = match (scores_in, manifest, checkpoint) {
                (Some(path), _, _) => (metrics::read_scores(&path)?, None),
                (None, Some(manifest), Some(checkpoint)) => {
                    let ck = load_checkpoint(&checkpoint)?;
                    let (model, _) = model_from_checkpoint(&ck, &checkpoint)?;
                    let (records, prov) = score_manifest(&model, &manifest, snr, &noise, seed)?;
                    (records, Some(prov))
                }
                _ => {
                    return Err(Error::Input(
                        "evaluate needs --scores-in, or --manifest with --checkpoint".to_string(),
                    ))
                }
            };
            if let Some(path) = scores {
                metrics::write_scores(&path, &records)?;
            }
            let report = metric_report(&records, provenances.as_deref())?;
            metrics::write_report(&metrics_out, &report)?;
            for (subset, metric, value) in &report {
                println!("{subset},{metric},{value:.4}");
            }
            if let Some(roc_path) = roc {
                let set = scored_set(&records)?;
                metrics::write_roc(&roc_path, &set)?;
            }
            Ok(0)
        }
        Command::ExportAttention {
            audio,
            filter,
            checkpoint,
            layer,
            out,
        } => {
            let filter = read_filter(&filter)?;
            let ck = load_checkpoint(&checkpoint)?;
            let (encoder, detector) = deployment_from_checkpoint(&ck, &checkpoint)?;
            let z = encoder.encode(&MelExtractor::new().extract(&load_wav(&audio)?)?)?;
            let output = detector.detect(&z, &filter.to_tensor())?;
            let (csv, pgm) = export_attention(&output, layer, &out)?;
            println!(
                "probability {:.6}; wrote {} and {}",
                output.probability,
                csv.display(),
                pgm.display()
            );
            Ok(0)
        }
        Command::MixNoise {
            clean,
            noise,
            babble_from,
            snr,
            out,
            seed,
        } => {
            let clean_clip = load_wav(&clean)?;
            let noise_clip = noise_clip(&noise, clean_clip.samples.len(), babble_from.as_deref(), seed)?;
            let mixed = mix_noise(&clean_clip, &noise_clip, snr, seed)?;
            write_wav(&out, &mixed)?;
            println!("wrote {} at {snr} dB SNR", out.display());
            Ok(0)
        }
    }
}

fn write_full_checkpoint(path: &Path, outcome: &crate::trainer::TrainOutcome<f32>) -> Result<()> {
    let mut ck = Checkpoint {
        meta: outcome.model.meta(CheckpointKind::Full),
        epoch: outcome.best_epoch as u32,
        val_loss: outcome.best_val_loss,
        adam_step: 0,
        records: Vec::new(),
    };
    ck.push_params(&outcome.model.all_params());
    let optimized = outcome.model.trainable_params(outcome.freeze_encoder);
    ck.push_adam(&optimized, &outcome.adam);
    save_checkpoint(path, &ck)
}

/// Rebuild a full model from a checkpoint's embedded configuration.
fn model_from_checkpoint(ck: &Checkpoint, path: &Path) -> Result<(KwsModel<f32>, CheckpointMeta)> {
    if ck.meta.kind != CheckpointKind::Full {
        return Err(Error::format(
            path,
            "need a full checkpoint (this one is encoder-only)",
        ));
    }
    let hypernet_cfg = ck.meta.hypernet.clone().ok_or_else(|| {
        Error::format(path, "full checkpoint is missing the hypernet config")
    })?;
    let perceiver_cfg = ck.meta.perceiver.clone().ok_or_else(|| {
        Error::format(path, "full checkpoint is missing the perceiver config")
    })?;
    let model = KwsModel::<f32>::init(&ck.meta.encoder, &hypernet_cfg, &perceiver_cfg, 0)?;
    ck.load_into(&model.all_params(), path)?;
    Ok((model, ck.meta.clone()))
}

/// On-device view: encoder + detector only. Hypernet parameters are never
/// read — the filter arrives from a .hskw file.
fn deployment_from_checkpoint(
    ck: &Checkpoint,
    path: &Path,
) -> Result<(ConformerEncoder<f32>, Detector<f32>)> {
    if ck.meta.kind != CheckpointKind::Full {
        return Err(Error::format(path, "need a full checkpoint"));
    }
    let perceiver_cfg = ck
        .meta
        .perceiver
        .clone()
        .ok_or_else(|| Error::format(path, "checkpoint is missing the perceiver config"))?;
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let encoder = ConformerEncoder::<f32>::init(&ck.meta.encoder, &mut rng)?;
    let detector = Detector::<f32>::init(&perceiver_cfg, ck.meta.encoder.model_dim, &mut rng)?;
    let mut params = ParamSet::new();
    encoder.collect("encoder", &mut params);
    detector.collect("detector", &mut params);
    ck.load_into(&params, path)?;
    Ok((encoder, detector))
}

fn noise_clip(
    spec: &str,
    len: usize,
    babble_from: Option<&Path>,
    seed: u64,
) -> Result<AudioClip> {
    match spec {
        "white" => gen_noise(NoiseKind::White, len, &[], seed),
        "pub" => {
            let manifest = babble_from.ok_or_else(|| {
                Error::Input("pub noise needs --babble-from <manifest>".to_string())
            })?;
            let entries = load_manifest(manifest)?;
            let sources: Vec<AudioClip> = entries
                .iter()
                .map(load_entry_audio)
                .collect::<Result<_>>()?;
            gen_noise(NoiseKind::PubLike, len, &sources, seed)
        }
        path => load_wav(Path::new(path)),
    }
}

/// Score every deterministic eval pair of a manifest, optionally mixing noise
/// into each clip first.
fn score_manifest(
    model: &KwsModel<f32>,
    manifest: &Path,
    snr: Option<f64>,
    noise: &str,
    seed: u64,
) -> Result<(Vec<ScoreRecord>, Vec<Provenance>)> {
    let entries = load_manifest(manifest)?;
    let pairs = build_eval_pairs(&entries)?;
    let extractor = MelExtractor::new();
    let mut clips = Vec::with_capacity(entries.len());
    for entry in &entries {
        clips.push(load_entry_audio(entry)?);
    }
    if let Some(snr_db) = snr {
        // pub-like babble draws its sources from the manifest's own clips
        let sources = clips.clone();
        for (i, clip) in clips.iter_mut().enumerate() {
            let noise_clip = match noise {
                "white" => gen_noise(NoiseKind::White, clip.samples.len(), &[], seed ^ i as u64)?,
                "pub" => gen_noise(NoiseKind::PubLike, clip.samples.len(), &sources, seed ^ i as u64)?,
                path => load_wav(Path::new(path))?,
            };
            *clip = mix_noise(clip, &noise_clip, snr_db, seed ^ (i as u64).rotate_left(17))?;
        }
    }
    let mels = clips
        .iter()
        .map(|c| extractor.extract(c))
        .collect::<Result<Vec<_>>>()?;
    let scores = crate::trainer::score_pairs(model, &pairs, &mels)?;
    let records = pairs
        .iter()
        .zip(scores)
        .map(|(pair, score)| ScoreRecord {
            clip_id: clip_id(&entries[pair.entry_index].audio, pair.entry_index),
            keyword: pair.keyword.text().to_string(),
            label: pair.label,
            score,
        })
        .collect();
    let provenances = pairs.iter().map(|p| p.provenance).collect();
    Ok((records, provenances))
}

fn clip_id(audio: &Path, index: usize) -> String {
    let stem = audio
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "clip".to_string());
    format!("{stem}#{index}")
}

fn scored_set(records: &[ScoreRecord]) -> Result<ScoredSet> {
    ScoredSet::new(
        records.iter().map(|r| r.score).collect(),
        records.iter().map(|r| r.label).collect(),
    )
}

/// One row per (subset, metric): the full set, plus positives-vs-one-
/// provenance subsets when the provenance breakdown is available.
fn metric_report(
    records: &[ScoreRecord],
    provenances: Option<&[Provenance]>,
) -> Result<Vec<(String, String, f64)>> {
    let mut rows = Vec::new();
    let set = scored_set(records)?;
    push_metrics(&mut rows, "all", &set);
    if let Some(provenances) = provenances {
        for negative_kind in [Provenance::RandNeg, Provenance::ConcatNeg, Provenance::SwapNeg] {
            let mut scores = Vec::new();
            let mut labels = Vec::new();
            for (r, p) in records.iter().zip(provenances) {
                if r.label == 1 || *p == negative_kind {
                    scores.push(r.score);
                    labels.push(r.label);
                }
            }
            if let Ok(subset) = ScoredSet::new(scores, labels) {
                push_metrics(&mut rows, &format!("vs_{}", negative_kind.as_str()), &subset);
            }
        }
    }
    Ok(rows)
}

fn push_metrics(rows: &mut Vec<(String, String, f64)>, subset: &str, set: &ScoredSet) {
    rows.push((subset.to_string(), "auc".to_string(), metrics::auc(set)));
    rows.push((subset.to_string(), "eer".to_string(), metrics::eer(set)));
    rows.push((subset.to_string(), "f1".to_string(), metrics::f1(set, 0.5)));
    rows.push((
        subset.to_string(),
        "frr_at_far5".to_string(),
        metrics::frr_at_far(set, 0.05),
    ));
}
