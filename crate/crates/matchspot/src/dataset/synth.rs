//! Deterministic synthetic tone-word corpus for desk-scale end-to-end runs.
//!
//! Each character maps to a fixed pure-tone frequency; a word is its
//! characters' tones in sequence, so keyword text composes acoustically and
//! held-out words remain decodable from characters seen in training. Word
//! alignments are exact by construction.

use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{write_manifest, ManifestEntry, WordSpan};
use crate::error::{Error, Result};
use crate::frontend::{write_wav, AudioClip, SAMPLE_RATE};

/// Word pool over the letters {a,b,d,e,g,i,k,o}. The first eight words cover
/// all eight letters, so any later word's characters are heard in training
/// when the first eight form the training vocabulary.
const WORD_POOL: [&str; 24] = [
    "bad", "dig", "oak", "bed", "keg", "bio", "dab", "ego", "gab", "kid", "ode", "big", "dog",
    "bag", "gik", "dak", "obe", "ida", "keb", "goa", "die", "bok", "age", "deb",
];

const CHAR_TONE_SAMPLES: usize = 1920; // 120 ms
const CHAR_GAP_SAMPLES: usize = 240; // 15 ms
const WORD_GAP_SAMPLES: usize = 2400; // 150 ms
const EDGE_PAD_SAMPLES: usize = 1600; // 100 ms
const RAMP_SAMPLES: usize = 160; // 10 ms fade at tone edges

#[derive(Debug, Clone)]
pub struct SynthSpec {
    pub train_clips: usize,
    pub val_clips: usize,
    pub holdout_clips: usize,
    pub train_keywords: usize,
    pub holdout_keywords: usize,
    pub min_words: usize,
    pub max_words: usize,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        SynthSpec {
            train_clips: 32,
            val_clips: 16,
            holdout_clips: 16,
            train_keywords: 8,
            holdout_keywords: 4,
            min_words: 3,
            max_words: 5,
            seed: 0,
        }
    }
}

pub struct SynthCorpus {
    pub train: Vec<ManifestEntry>,
    pub val: Vec<ManifestEntry>,
    pub holdout: Vec<ManifestEntry>,
    pub train_vocab: Vec<String>,
    pub holdout_vocab: Vec<String>,
    pub train_manifest: PathBuf,
    pub val_manifest: PathBuf,
    pub holdout_manifest: PathBuf,
}

/// Log-spaced tone frequency for a letter, distinct per letter, 300–3800 Hz.
pub fn char_frequency(c: char) -> f64 {
    let idx = (c as u32).saturating_sub('a' as u32).min(25) as f64;
    300.0 * (3800.0f64 / 300.0).powf(idx / 25.0)
}

fn synth_word(word: &str, gain: f64, out: &mut Vec<f32>) {
    for (ci, c) in word.chars().enumerate() {
        if ci > 0 {
            out.extend(std::iter::repeat(0.0).take(CHAR_GAP_SAMPLES));
        }
        let freq = char_frequency(c);
        for i in 0..CHAR_TONE_SAMPLES {
            let ramp_in = ((i as f64 + 1.0) / RAMP_SAMPLES as f64).min(1.0);
            let ramp_out = ((CHAR_TONE_SAMPLES - i) as f64 / RAMP_SAMPLES as f64).min(1.0);
            let envelope = gain * ramp_in * ramp_out;
            let phase = 2.0 * std::f64::consts::PI * freq * i as f64 / SAMPLE_RATE as f64;
            out.push((envelope * phase.sin()) as f32);
        }
    }
}

fn synth_clip(words: &[String], rng: &mut ChaCha8Rng) -> (AudioClip, Vec<WordSpan>) {
    let mut samples: Vec<f32> = Vec::new();
    let mut spans = Vec::with_capacity(words.len());
    samples.extend(std::iter::repeat(0.0).take(EDGE_PAD_SAMPLES));
    for (wi, word) in words.iter().enumerate() {
        if wi > 0 {
            samples.extend(std::iter::repeat(0.0).take(WORD_GAP_SAMPLES));
        }
        let gain = 0.30 + 0.15 * rng.gen::<f64>();
        let start = samples.len();
        synth_word(word, gain, &mut samples);
        spans.push(WordSpan {
            w: word.clone(),
            start: start as f64 / SAMPLE_RATE as f64,
            end: samples.len() as f64 / SAMPLE_RATE as f64,
        });
    }
    samples.extend(std::iter::repeat(0.0).take(EDGE_PAD_SAMPLES));
    (AudioClip::from_samples(samples), spans)
}

/// Pick `count` distinct words: `forced` first, the rest drawn from `vocab`.
fn choose_words(
    forced: Option<&str>,
    vocab: &[String],
    count: usize,
    rng: &mut ChaCha8Rng,
) -> Vec<String> {
    let mut pool: Vec<&String> = vocab.iter().filter(|w| Some(w.as_str()) != forced).collect();
    let mut words: Vec<String> = Vec::with_capacity(count);
    if let Some(f) = forced {
        words.push(f.to_string());
    }
    while words.len() < count && !pool.is_empty() {
        let i = rng.gen_range(0..pool.len());
        words.push(pool.swap_remove(i).clone());
    }
    // position of every word is random
    for i in (1..words.len()).rev() {
        let j = rng.gen_range(0..=i);
        words.swap(i, j);
    }
    words
}

fn synth_split(
    dir: &Path,
    prefix: &str,
    n_clips: usize,
    vocab: &[String],
    forced_cycle: Option<&[String]>,
    spec: &SynthSpec,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<ManifestEntry>> {
    let wav_dir = dir.join("wavs");
    std::fs::create_dir_all(&wav_dir).map_err(|e| Error::io(&wav_dir, e))?;
    let mut entries = Vec::with_capacity(n_clips);
    for i in 0..n_clips {
        let n_words = rng.gen_range(spec.min_words..=spec.max_words.min(vocab.len()));
        let forced = forced_cycle.map(|cycle| cycle[i % cycle.len()].as_str());
        let words = choose_words(forced, vocab, n_words, rng);
        let (clip, spans) = synth_clip(&words, rng);
        let rel = PathBuf::from("wavs").join(format!("{prefix}_{i:03}.wav"));
        write_wav(&dir.join(&rel), &clip)?;
        entries.push(ManifestEntry {
            audio: rel,
            text: words.join(" "),
            words: Some(spans),
            span: None,
        });
    }
    Ok(entries)
}

/// Generate the corpus under `out_dir`: WAVs plus train/val/holdout JSONL
/// manifests (relative audio paths, so the directory is relocatable).
/// Everything derives from `spec.seed`.
pub fn generate_corpus(out_dir: &Path, spec: &SynthSpec) -> Result<SynthCorpus> {
    if spec.train_keywords + spec.holdout_keywords > WORD_POOL.len() {
        return Err(Error::Config(format!(
            "at most {} keywords available, asked for {}",
            WORD_POOL.len(),
            spec.train_keywords + spec.holdout_keywords
        )));
    }
    if spec.train_keywords < 2 || spec.min_words < 1 || spec.max_words < spec.min_words {
        return Err(Error::Config("bad synth corpus shape".to_string()));
    }
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let train_vocab: Vec<String> =
        WORD_POOL[..spec.train_keywords].iter().map(|s| s.to_string()).collect();
    let holdout_vocab: Vec<String> = WORD_POOL
        [spec.train_keywords..spec.train_keywords + spec.holdout_keywords]
        .iter()
        .map(|s| s.to_string())
        .collect();

    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let train = synth_split(out_dir, "train", spec.train_clips, &train_vocab, Some(&train_vocab), spec, &mut rng)?;
    let val = synth_split(out_dir, "val", spec.val_clips, &train_vocab, Some(&train_vocab), spec, &mut rng)?;
    // each holdout clip contains exactly one held-out keyword among train fillers
    let mut holdout = Vec::new();
    if spec.holdout_clips > 0 {
        if spec.holdout_keywords == 0 {
            return Err(Error::Config("holdout clips need holdout keywords".to_string()));
        }
        let wav_dir = out_dir.join("wavs");
        std::fs::create_dir_all(&wav_dir).map_err(|e| Error::io(&wav_dir, e))?;
        for i in 0..spec.holdout_clips {
            let kw = &holdout_vocab[i % holdout_vocab.len()];
            let n_words = rng.gen_range(spec.min_words..=spec.max_words.min(train_vocab.len() + 1));
            let mut words = choose_words(Some(kw), &train_vocab, n_words, &mut rng);
            if !words.contains(kw) {
                words.push(kw.clone());
            }
            let (clip, spans) = synth_clip(&words, &mut rng);
            let rel = PathBuf::from("wavs").join(format!("holdout_{i:03}.wav"));
            write_wav(&out_dir.join(&rel), &clip)?;
            holdout.push(ManifestEntry {
                audio: rel,
                text: words.join(" "),
                words: Some(spans),
                span: None,
            });
        }
    }

    let train_manifest = out_dir.join("train.jsonl");
    let val_manifest = out_dir.join("val.jsonl");
    let holdout_manifest = out_dir.join("holdout.jsonl");
    write_manifest(&train_manifest, &train)?;
    write_manifest(&val_manifest, &val)?;
    write_manifest(&holdout_manifest, &holdout)?;

    // return entries with resolved audio paths, like load_manifest would
    let resolve = |mut es: Vec<ManifestEntry>| -> Vec<ManifestEntry> {
        for e in &mut es {
            e.audio = out_dir.join(&e.audio);
        }
        es
    };
    Ok(SynthCorpus {
        train: resolve(train),
        val: resolve(val),
        holdout: resolve(holdout),
        train_vocab,
        holdout_vocab,
        train_manifest,
        val_manifest,
        holdout_manifest,
    })
}
