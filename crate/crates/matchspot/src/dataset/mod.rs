//! Manifest ingestion, segmentation rules, and positive/negative example
//! construction for training and deterministic evaluation sampling.

mod sampling;
mod synth;

pub use sampling::{
    build_batch, build_eval_pairs, build_pairs, neg_concat, neg_nearest, neg_random, neg_swap,
    sample_positive, BatchMode, ExamplePair, Provenance, MAX_POSITIVE_SPAN,
};
pub use synth::{generate_corpus, SynthCorpus, SynthSpec};

use std::io::{BufRead, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct WordSpan {
    pub w: String,
    pub start: f64,
    pub end: f64,
}

/// One manifest line: an audio file, its transcript, optional word-level
/// alignment, and an optional sub-clip window produced by segmentation.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct ManifestEntry {
    pub audio: PathBuf,
    pub text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub words: Option<Vec<WordSpan>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub span: Option<(f64, f64)>,
}

impl ManifestEntry {
    pub fn words_vec(&self) -> Vec<&str> {
        self.text.split_whitespace().collect()
    }

    fn validate(&self, lineno: usize, path: &Path) -> Result<()> {
        if self.text.split_whitespace().next().is_none() {
            return Err(Error::format(path, format!("line {lineno}: empty transcript")));
        }
        if let Some(words) = &self.words {
            let mut prev_start = f64::NEG_INFINITY;
            for w in words {
                if w.end < w.start || w.start < prev_start {
                    return Err(Error::format(
                        path,
                        format!("line {lineno}: alignment not monotone at word {:?}", w.w),
                    ));
                }
                prev_start = w.start;
            }
            if words.len() != self.words_vec().len() {
                return Err(Error::format(
                    path,
                    format!(
                        "line {lineno}: alignment has {} words, transcript has {}",
                        words.len(),
                        self.words_vec().len()
                    ),
                ));
            }
        }
        Ok(())
    }
}

/// Load a JSONL manifest. Relative audio paths resolve against the manifest's
/// directory so corpora are relocatable.
pub fn load_manifest(path: &Path) -> Result<Vec<ManifestEntry>> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let base = path.parent().unwrap_or(Path::new("."));
    let mut entries = Vec::new();
    for (i, line) in std::io::BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let mut entry: ManifestEntry = serde_json::from_str(&line)
            .map_err(|e| Error::format(path, format!("line {}: {e}", i + 1)))?;
        entry.validate(i + 1, path)?;
        if entry.audio.is_relative() {
            entry.audio = base.join(&entry.audio);
        }
        entries.push(entry);
    }
    if entries.is_empty() {
        return Err(Error::format(path, "manifest has no entries"));
    }
    Ok(entries)
}

pub fn write_manifest(path: &Path, entries: &[ManifestEntry]) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = std::io::BufWriter::new(file);
    for entry in entries {
        let line = serde_json::to_string(entry)
            .map_err(|e| Error::format(path, e.to_string()))?;
        writeln!(w, "{line}").map_err(|e| Error::io(path, e))?;
    }
    Ok(())
}

/// Segmentation rule: clips shorter than `min_s` are dropped; clips longer
/// than `max_s` are split into two at the word boundary nearest the midpoint
/// (sample midpoint when no alignment exists), recursively.
pub fn segment(entry: &ManifestEntry, duration_s: f64, min_s: f64, max_s: f64) -> Vec<ManifestEntry> {
    let (start, end) = entry.span.unwrap_or((0.0, duration_s));
    let dur = end - start;
    if dur < min_s {
        return Vec::new();
    }
    if dur <= max_s {
        return vec![entry.clone()];
    }
    let mid = (start + end) / 2.0;
    let (first, second) = match &entry.words {
        Some(words) if !words.is_empty() => {
            // boundary after word i = words[i].end; choose the one nearest mid
            let mut best = None;
            for i in 0..words.len().saturating_sub(1) {
                let b = words[i].end;
                if b > start && b < end {
                    let d = (b - mid).abs();
                    if best.map_or(true, |(_, bd)| d < bd) {
                        best = Some((i, d));
                    }
                }
            }
            match best {
                Some((i, _)) => {
                    let b = words[i].end;
                    let head: Vec<WordSpan> = words[..=i].to_vec();
                    let tail: Vec<WordSpan> = words[i + 1..].to_vec();
                    (
                        ManifestEntry {
                            audio: entry.audio.clone(),
                            text: head.iter().map(|w| w.w.as_str()).collect::<Vec<_>>().join(" "),
                            words: Some(head),
                            span: Some((start, b)),
                        },
                        ManifestEntry {
                            audio: entry.audio.clone(),
                            text: tail.iter().map(|w| w.w.as_str()).collect::<Vec<_>>().join(" "),
                            words: Some(tail),
                            span: Some((b, end)),
                        },
                    )
                }
                None => split_at_sample_midpoint(entry, start, mid, end),
            }
        }
        _ => split_at_sample_midpoint(entry, start, mid, end),
    };
    let mut out = segment(&first, duration_s, min_s, max_s);
    out.extend(segment(&second, duration_s, min_s, max_s));
    out
}

fn split_at_sample_midpoint(
    entry: &ManifestEntry,
    start: f64,
    mid: f64,
    end: f64,
) -> (ManifestEntry, ManifestEntry) {
    let words = entry.words_vec();
    let cut = words.len().div_ceil(2);
    (
        ManifestEntry {
            audio: entry.audio.clone(),
            text: words[..cut].join(" "),
            words: None,
            span: Some((start, mid)),
        },
        ManifestEntry {
            audio: entry.audio.clone(),
            text: words[cut..].join(" "),
            words: None,
            span: Some((mid, end)),
        },
    )
}

/// Character-level Levenshtein distance.
pub fn levenshtein(a: &str, b: &str) -> usize {
    let a: Vec<char> = a.chars().collect();
    let b: Vec<char> = b.chars().collect();
    let mut prev: Vec<usize> = (0..=b.len()).collect();
    let mut cur = vec![0usize; b.len() + 1];
    for (i, &ca) in a.iter().enumerate() {
        cur[0] = i + 1;
        for (j, &cb) in b.iter().enumerate() {
            let sub = prev[j] + usize::from(ca != cb);
            cur[j + 1] = sub.min(prev[j + 1] + 1).min(cur[j] + 1);
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

/// True when `keyword` appears as a contiguous word subsequence of `text`
/// (both compared after whitespace normalization and lowercasing).
pub fn keyword_in_transcript(keyword: &str, text: &str) -> bool {
    let kw: Vec<String> = keyword.split_whitespace().map(|w| w.to_lowercase()).collect();
    let words: Vec<String> = text.split_whitespace().map(|w| w.to_lowercase()).collect();
    if kw.is_empty() || kw.len() > words.len() {
        return false;
    }
    words.windows(kw.len()).any(|w| w == kw.as_slice())
}

/// Load an entry's audio, applying its sub-clip window when present.
pub fn load_entry_audio(entry: &ManifestEntry) -> Result<crate::frontend::AudioClip> {
    let clip = crate::frontend::load_wav(&entry.audio)?;
    match entry.span {
        None => Ok(clip),
        Some((start, end)) => {
            let rate = clip.sample_rate as f64;
            let a = (start * rate).round() as usize;
            let b = (end * rate).round() as usize;
            if b <= a || a >= clip.samples.len() {
                return Err(Error::Input(format!(
                    "span {start}..{end}s outside clip {:?}",
                    entry.audio
                )));
            }
            Ok(clip.slice(a, b - a))
        }
    }
}

/// Stable 64-bit FNV-1a, used to derive deterministic per-entry rng seeds.
pub(crate) fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut hash = 0xcbf2_9ce4_8422_2325u64;
    for &b in bytes {
        hash ^= b as u64;
        hash = hash.wrapping_mul(0x0000_0100_0000_01b3);
    }
    hash
}

#[cfg(test)]
mod tests {
    use super::*;

    fn entry(text: &str, words: Option<Vec<WordSpan>>) -> ManifestEntry {
        ManifestEntry {
            audio: PathBuf::from("clip.wav"),
            text: text.to_string(),
            words,
            span: None,
        }
    }

    #[test]
    fn short_clip_dropped() {
        let e = entry("hi there", None);
        assert!(segment(&e, 0.4, 0.5, 30.0).is_empty());
    }

    #[test]
    fn long_clip_split_in_two_halves() {
        let e = entry("one two three four", None);
        let parts = segment(&e, 31.0, 0.5, 30.0);
        assert_eq!(parts.len(), 2);
        assert_eq!(parts[0].span, Some((0.0, 15.5)));
        assert_eq!(parts[1].span, Some((15.5, 31.0)));
        assert_eq!(parts[0].text, "one two");
        assert_eq!(parts[1].text, "three four");
    }

    #[test]
    fn mid_length_clip_unchanged() {
        let e = entry("hello world", None);
        let parts = segment(&e, 10.0, 0.5, 30.0);
        assert_eq!(parts.len(), 1);
        assert_eq!(parts[0], e);
    }

    #[test]
    fn aligned_clip_splits_at_word_boundary() {
        let words = vec![
            WordSpan { w: "alpha".into(), start: 0.0, end: 12.0 },
            WordSpan { w: "beta".into(), start: 12.5, end: 20.0 },
            WordSpan { w: "gamma".into(), start: 20.5, end: 34.0 },
        ];
        let e = entry("alpha beta gamma", Some(words));
        let parts = segment(&e, 35.0, 0.5, 30.0);
        // nearest word boundary to 17.5 is beta's end at 20.0
        assert_eq!(parts.len(), 2);
        assert_eq!(parts[0].span, Some((0.0, 20.0)));
        assert_eq!(parts[0].text, "alpha beta");
        assert_eq!(parts[1].span, Some((20.0, 35.0)));
        assert_eq!(parts[1].text, "gamma");
    }

    #[test]
    fn segments_all_within_bounds_recursive() {
        let e = entry(&vec!["w"; 64].join(" "), None);
        let parts = segment(&e, 100.0, 0.5, 30.0);
        assert!(parts.len() >= 4);
        for p in &parts {
            let (s, t) = p.span.unwrap();
            let d = t - s;
            assert!((0.5..=30.0).contains(&d), "segment {d}");
        }
    }

    #[test]
    fn levenshtein_basics() {
        assert_eq!(levenshtein("cat", "cat"), 0);
        assert_eq!(levenshtein("cat", "cap"), 1);
        assert_eq!(levenshtein("cat", "dog"), 3);
        assert_eq!(levenshtein("", "abc"), 3);
        assert_eq!(levenshtein("kitten", "sitting"), 3);
    }

    #[test]
    fn transcript_word_matching() {
        assert!(keyword_in_transcript("legal basis", "the legal basis of the union"));
        assert!(!keyword_in_transcript("legal basis", "the legal framework basis"));
        assert!(!keyword_in_transcript("gal", "the legal basis")); // no substrings of words
        assert!(keyword_in_transcript("the", "The quick fox"));
    }

    #[test]
    fn manifest_roundtrip_and_validation() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.jsonl");
        let entries = vec![
            entry("hello world", None),
            entry(
                "a b",
                Some(vec![
                    WordSpan { w: "a".into(), start: 0.0, end: 0.5 },
                    WordSpan { w: "b".into(), start: 0.6, end: 1.0 },
                ]),
            ),
        ];
        write_manifest(&path, &entries).unwrap();
        let back = load_manifest(&path).unwrap();
        assert_eq!(back.len(), 2);
        // relative paths resolve against the manifest directory
        assert!(back[0].audio.is_absolute() || back[0].audio.starts_with(dir.path()));
        assert_eq!(back[1].words.as_ref().unwrap().len(), 2);

        std::fs::write(&path, b"{\"audio\":\"x.wav\",\"text\":\"  \"}\n").unwrap();
        assert!(load_manifest(&path).is_err());
        std::fs::write(&path, b"{\"audio\":\"x.wav\",\"text\":\"hi\",\"bogus\":1}\n").unwrap();
        assert!(load_manifest(&path).is_err());
    }
}
