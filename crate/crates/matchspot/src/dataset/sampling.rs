use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{fnv1a64, keyword_in_transcript, levenshtein, ManifestEntry};
use crate::error::{Error, Result};
use crate::hypernet::Keyword;

/// Positive keywords span one to four transcript words.
pub const MAX_POSITIVE_SPAN: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Provenance {
    Positive,
    RandNeg,
    ConcatNeg,
    SwapNeg,
    NearestNeg,
}

impl Provenance {
    pub fn as_str(&self) -> &'static str {
        match self {
            Provenance::Positive => "positive",
            Provenance::RandNeg => "rand_neg",
            Provenance::ConcatNeg => "concat_neg",
            Provenance::SwapNeg => "swap_neg",
            Provenance::NearestNeg => "nearest_neg",
        }
    }
}

/// One training/eval example: a clip reference, a keyword, and the binary
/// label. Positives carry the keyword's aligned time span when the manifest
/// has word alignments (clip-local seconds).
#[derive(Debug, Clone)]
pub struct ExamplePair {
    pub entry_index: usize,
    pub keyword: Keyword,
    pub label: u8,
    pub provenance: Provenance,
    pub keyword_span: Option<(f64, f64)>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BatchMode {
    Train,
    Eval,
}

/// Draw a positive example: a contiguous span of 1–4 transcript words.
/// Spans containing out-of-charset words are redrawn.
pub fn sample_positive(
    entry: &ManifestEntry,
    entry_index: usize,
    rng: &mut ChaCha8Rng,
) -> Result<ExamplePair> {
    let words = entry.words_vec();
    let n = words.len();
    let clip_offset = entry.span.map_or(0.0, |(s, _)| s);
    let try_span = |start: usize, len: usize| -> Option<ExamplePair> {
        let keyword = Keyword::new(&words[start..start + len].join(" ")).ok()?;
        let keyword_span = entry.words.as_ref().map(|spans| {
            (
                spans[start].start - clip_offset,
                spans[start + len - 1].end - clip_offset,
            )
        });
        Some(ExamplePair {
            entry_index,
            keyword,
            label: 1,
            provenance: Provenance::Positive,
            keyword_span,
        })
    };
    for _ in 0..20 {
        let len = rng.gen_range(1..=MAX_POSITIVE_SPAN.min(n));
        let start = rng.gen_range(0..=n - len);
        if let Some(pair) = try_span(start, len) {
            return Ok(pair);
        }
    }
    // deterministic fallback scan over all spans
    for len in 1..=MAX_POSITIVE_SPAN.min(n) {
        for start in 0..=n - len {
            if let Some(pair) = try_span(start, len) {
                return Ok(pair);
            }
        }
    }
    Err(Error::Sampling(format!(
        "transcript {:?} has no span expressible in the keyword charset",
        entry.text
    )))
}

/// Random other target keyword from the batch.
pub fn neg_random(
    target: &Keyword,
    batch_keywords: &[Keyword],
    rng: &mut ChaCha8Rng,
) -> Result<Keyword> {
    let others: Vec<&Keyword> = batch_keywords.iter().filter(|k| *k != target).collect();
    if others.is_empty() {
        return Err(Error::Sampling(
            "all batch keywords equal the target; no random negative exists".to_string(),
        ));
    }
    Ok(others[rng.gen_range(0..others.len())].clone())
}

/// Concatenation of two different batch keywords, avoiding accidental
/// transcript matches; falls back to `neg_random` after ten tries.
pub fn neg_concat(
    target: &Keyword,
    batch_keywords: &[Keyword],
    transcript: &str,
    rng: &mut ChaCha8Rng,
) -> Result<(Keyword, Provenance)> {
    let mut distinct: Vec<&Keyword> = Vec::new();
    for k in batch_keywords {
        if !distinct.contains(&k) {
            distinct.push(k);
        }
    }
    if distinct.len() >= 2 {
        for _ in 0..10 {
            let a = distinct[rng.gen_range(0..distinct.len())];
            let mut b = distinct[rng.gen_range(0..distinct.len())];
            while b == a {
                b = distinct[rng.gen_range(0..distinct.len())];
            }
            let joined = Keyword::new(&format!("{} {}", a.text(), b.text()))?;
            if !keyword_in_transcript(joined.text(), transcript) && &joined != target {
                return Ok((joined, Provenance::ConcatNeg));
            }
        }
    }
    Ok((neg_random(target, batch_keywords, rng)?, Provenance::RandNeg))
}

/// Swap one non-space character of the target for a different letter.
/// Length is preserved and the edit distance from the target is exactly one.
pub fn neg_swap(target: &Keyword, rng: &mut ChaCha8Rng) -> Result<Keyword> {
    let chars: Vec<char> = target.text().chars().collect();
    let positions: Vec<usize> = (0..chars.len()).filter(|&i| chars[i] != ' ').collect();
    if positions.is_empty() {
        return Err(Error::Sampling("target has no swappable character".to_string()));
    }
    let pos = positions[rng.gen_range(0..positions.len())];
    let letters: Vec<char> = ('a'..='z').filter(|&c| c != chars[pos]).collect();
    let mut out = chars;
    out[pos] = letters[rng.gen_range(0..letters.len())];
    Keyword::new(&out.iter().collect::<String>())
}

/// Nearest other batch keyword by character-level Levenshtein distance, ties
/// broken lexicographically so the result is deterministic.
pub fn neg_nearest(target: &Keyword, batch_keywords: &[Keyword]) -> Result<Keyword> {
    batch_keywords
        .iter()
        .filter(|k| *k != target)
        .min_by(|a, b| {
            levenshtein(a.text(), target.text())
                .cmp(&levenshtein(b.text(), target.text()))
                .then_with(|| a.text().cmp(b.text()))
        })
        .cloned()
        .ok_or_else(|| Error::Sampling("no other keyword in batch".to_string()))
}

const POS_SALT: u64 = 0x706f_7369_7469_7665; // "positive"
const NEG_SALT: u64 = 0x6e65_6761_7469_7665; // "negative"

fn eval_positive_rng(entry: &ManifestEntry, entry_index: usize) -> ChaCha8Rng {
    let h = fnv1a64(entry.audio.as_os_str().as_encoded_bytes())
        ^ (entry_index as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15)
        ^ POS_SALT;
    ChaCha8Rng::seed_from_u64(h)
}

fn eval_negative_rng(entry: &ManifestEntry, keyword: &Keyword) -> ChaCha8Rng {
    let h = fnv1a64(entry.audio.as_os_str().as_encoded_bytes())
        ^ fnv1a64(keyword.text().as_bytes())
        ^ NEG_SALT;
    ChaCha8Rng::seed_from_u64(h)
}

fn negative_for(
    entry: &ManifestEntry,
    target: &Keyword,
    batch_keywords: &[Keyword],
    mode: BatchMode,
    rng: &mut ChaCha8Rng,
) -> Result<(Keyword, Provenance)> {
    let n_strategies = match mode {
        BatchMode::Train => 4,
        BatchMode::Eval => 3, // nearest negative excluded during evaluation
    };
    for _ in 0..10 {
        let attempt = match rng.gen_range(0..n_strategies) {
            0 => neg_random(target, batch_keywords, rng).map(|k| (k, Provenance::RandNeg)),
            1 => neg_concat(target, batch_keywords, &entry.text, rng),
            2 => neg_swap(target, rng).map(|k| (k, Provenance::SwapNeg)),
            _ => neg_nearest(target, batch_keywords).map(|k| (k, Provenance::NearestNeg)),
        };
        // a strategy can be unavailable (e.g. every batch keyword equals the
        // target); draw again
        let Ok((candidate, provenance)) = attempt else { continue };
        if &candidate != target && !keyword_in_transcript(candidate.text(), &entry.text) {
            return Ok((candidate, provenance));
        }
    }
    // character swaps escape any finite transcript quickly
    for _ in 0..100 {
        let candidate = neg_swap(target, rng)?;
        if !keyword_in_transcript(candidate.text(), &entry.text) {
            return Ok((candidate, Provenance::SwapNeg));
        }
    }
    Err(Error::Sampling(format!(
        "could not find a negative for {:?} against {:?}",
        target.text(),
        entry.text
    )))
}

/// Build example pairs for an explicit entry selection: one positive plus one
/// negative per entry (1:1 ratio), interleaved.
pub fn build_pairs(
    entries: &[ManifestEntry],
    chosen: &[usize],
    mode: BatchMode,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<ExamplePair>> {
    let mut positives = Vec::with_capacity(chosen.len());
    for &idx in chosen {
        let entry = &entries[idx];
        let pair = match mode {
            BatchMode::Train => sample_positive(entry, idx, rng)?,
            BatchMode::Eval => {
                let mut prng = eval_positive_rng(entry, idx);
                sample_positive(entry, idx, &mut prng)?
            }
        };
        positives.push(pair);
    }
    let batch_keywords: Vec<Keyword> = positives.iter().map(|p| p.keyword.clone()).collect();
    let mut out = Vec::with_capacity(chosen.len() * 2);
    for pair in positives {
        let entry = &entries[pair.entry_index];
        let (keyword, provenance) = match mode {
            BatchMode::Train => negative_for(entry, &pair.keyword, &batch_keywords, mode, rng)?,
            BatchMode::Eval => {
                let mut nrng = eval_negative_rng(entry, &pair.keyword);
                negative_for(entry, &pair.keyword, &batch_keywords, mode, &mut nrng)?
            }
        };
        let negative = ExamplePair {
            entry_index: pair.entry_index,
            keyword,
            label: 0,
            provenance,
            keyword_span: None,
        };
        out.push(pair);
        out.push(negative);
    }
    Ok(out)
}

/// Assemble one batch of `batch_size` pairs (half positive, half negative).
/// Train mode draws entries with the supplied rng; eval mode walks the
/// manifest in order and derives all randomness from (entry, keyword) so
/// evaluation pairs are identical across runs.
pub fn build_batch(
    entries: &[ManifestEntry],
    batch_size: usize,
    mode: BatchMode,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<ExamplePair>> {
    if batch_size < 2 || batch_size % 2 != 0 {
        return Err(Error::Input(format!(
            "batch size must be an even number >= 2, got {batch_size}"
        )));
    }
    if entries.len() < 2 {
        return Err(Error::Input("need at least two manifest entries".to_string()));
    }
    let half = batch_size / 2;
    let chosen: Vec<usize> = match mode {
        BatchMode::Train => {
            let mut order: Vec<usize> = (0..entries.len()).collect();
            for i in (1..order.len()).rev() {
                let j = rng.gen_range(0..=i);
                order.swap(i, j);
            }
            (0..half).map(|i| order[i % order.len()]).collect()
        }
        BatchMode::Eval => (0..half).map(|i| i % entries.len()).collect(),
    };
    build_pairs(entries, &chosen, mode, rng)
}

/// Deterministic evaluation pairs over a whole manifest, in manifest order.
pub fn build_eval_pairs(entries: &[ManifestEntry]) -> Result<Vec<ExamplePair>> {
    let chosen: Vec<usize> = (0..entries.len()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(0); // unused in eval mode
    build_pairs(entries, &chosen, BatchMode::Eval, &mut rng)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::path::PathBuf;

    fn entry(text: &str) -> ManifestEntry {
        ManifestEntry {
            audio: PathBuf::from(format!("{}.wav", text.replace(' ', "_"))),
            text: text.to_string(),
            words: None,
            span: None,
        }
    }

    fn kw(s: &str) -> Keyword {
        Keyword::new(s).unwrap()
    }

    #[test]
    fn positive_from_single_word_transcript() {
        let e = entry("hello");
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let p = sample_positive(&e, 0, &mut rng).unwrap();
        assert_eq!(p.keyword.text(), "hello");
        assert_eq!(p.label, 1);
    }

    #[test]
    fn positive_reproducible_and_always_substring() {
        let e = entry("the quick brown fox jumps over the lazy dog");
        let mut a = ChaCha8Rng::seed_from_u64(9);
        let mut b = ChaCha8Rng::seed_from_u64(9);
        assert_eq!(
            sample_positive(&e, 0, &mut a).unwrap().keyword,
            sample_positive(&e, 0, &mut b).unwrap().keyword
        );
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..1000 {
            let p = sample_positive(&e, 0, &mut rng).unwrap();
            assert!(keyword_in_transcript(p.keyword.text(), &e.text));
            let len = p.keyword.text().split_whitespace().count();
            assert!((1..=MAX_POSITIVE_SPAN).contains(&len));
        }
    }

    #[test]
    fn neg_random_forced_and_never_target() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let batch = [kw("a"), kw("b")];
        assert_eq!(neg_random(&kw("a"), &batch, &mut rng).unwrap(), kw("b"));
        let batch3 = [kw("a"), kw("b"), kw("c")];
        for _ in 0..200 {
            assert_ne!(neg_random(&kw("a"), &batch3, &mut rng).unwrap(), kw("a"));
        }
        assert!(neg_random(&kw("a"), &[kw("a"), kw("a")], &mut rng).is_err());
    }

    #[test]
    fn neg_random_uniform_within_3_sigma() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let batch = [kw("t"), kw("x"), kw("y"), kw("z")];
        let mut counts = std::collections::HashMap::new();
        let n = 10_000;
        for _ in 0..n {
            *counts.entry(neg_random(&kw("t"), &batch, &mut rng).unwrap()).or_insert(0usize) += 1;
        }
        let p = 1.0 / 3.0;
        let sigma = (n as f64 * p * (1.0 - p)).sqrt();
        for (_, c) in counts {
            assert!((c as f64 - n as f64 * p).abs() <= 3.0 * sigma, "count {c}");
        }
    }

    #[test]
    fn neg_concat_outcomes() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let batch = [kw("legal"), kw("basis")];
        for _ in 0..100 {
            let (c, prov) = neg_concat(&kw("legal"), &batch, "something else entirely", &mut rng).unwrap();
            assert_eq!(prov, Provenance::ConcatNeg);
            assert!(c == kw("legal basis") || c == kw("basis legal"));
            let spaces = c.text().matches(' ').count();
            assert_eq!(spaces, 1);
        }
        // over many draws the concat never matches the transcript
        for i in 0..1000 {
            let mut rng = ChaCha8Rng::seed_from_u64(i);
            let (c, _) = neg_concat(&kw("alpha"), &[kw("alpha"), kw("beta"), kw("gamma")], "alpha beta here", &mut rng).unwrap();
            assert!(!keyword_in_transcript(c.text(), "alpha beta here"), "{c}");
        }
    }

    #[test]
    fn neg_swap_edit_distance_one() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..1000 {
            let t = kw("legal basis");
            let s = neg_swap(&t, &mut rng).unwrap();
            assert_ne!(s, t);
            assert_eq!(s.text().len(), t.text().len());
            assert_eq!(levenshtein(s.text(), t.text()), 1);
        }
        let one = neg_swap(&kw("a"), &mut rng).unwrap();
        assert_eq!(one.text().len(), 1);
        assert_ne!(one, kw("a"));
    }

    #[test]
    fn neg_nearest_by_distance_with_stable_ties() {
        let batch = [kw("cap"), kw("dog"), kw("cat")];
        assert_eq!(neg_nearest(&kw("cat"), &batch).unwrap(), kw("cap"));
        let one = [kw("zzz"), kw("cat")];
        assert_eq!(neg_nearest(&kw("cat"), &one).unwrap(), kw("zzz"));
        // tie between "bat" and "fat": lexicographic
        let tied = [kw("fat"), kw("bat"), kw("cat")];
        assert_eq!(neg_nearest(&kw("cat"), &tied).unwrap(), kw("bat"));
        let mut reversed = tied.to_vec();
        reversed.reverse();
        assert_eq!(neg_nearest(&kw("cat"), &reversed).unwrap(), kw("bat"));
    }

    fn corpus() -> Vec<ManifestEntry> {
        vec![
            entry("alpha beta gamma"),
            entry("delta epsilon"),
            entry("zeta eta theta iota"),
            entry("kappa lambda"),
            entry("mu nu xi omicron pi"),
            entry("rho sigma tau"),
        ]
    }

    #[test]
    fn batch_ratio_and_labels() {
        let entries = corpus();
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let batch = build_batch(&entries, 8, BatchMode::Train, &mut rng).unwrap();
        assert_eq!(batch.len(), 8);
        assert_eq!(batch.iter().filter(|p| p.label == 1).count(), 4);
        assert_eq!(batch.iter().filter(|p| p.label == 0).count(), 4);
        for p in &batch {
            let text = &entries[p.entry_index].text;
            if p.label == 1 {
                assert!(keyword_in_transcript(p.keyword.text(), text));
            } else {
                assert!(!keyword_in_transcript(p.keyword.text(), text));
            }
        }
    }

    #[test]
    fn eval_batches_identical_across_runs_and_never_nearest() {
        let entries = corpus();
        for _ in 0..3 {
            let a = build_eval_pairs(&entries).unwrap();
            let b = build_eval_pairs(&entries).unwrap();
            assert_eq!(a.len(), b.len());
            for (x, y) in a.iter().zip(&b) {
                assert_eq!(x.keyword, y.keyword);
                assert_eq!(x.label, y.label);
                assert_eq!(x.provenance, y.provenance);
                assert_ne!(x.provenance, Provenance::NearestNeg);
            }
        }
    }

    #[test]
    fn train_batches_can_use_nearest() {
        let entries = corpus();
        let mut seen_nearest = false;
        for seed in 0..50 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let batch = build_batch(&entries, 12, BatchMode::Train, &mut rng).unwrap();
            seen_nearest |= batch.iter().any(|p| p.provenance == Provenance::NearestNeg);
        }
        assert!(seen_nearest);
    }

    #[test]
    fn bad_batch_sizes_rejected() {
        let entries = corpus();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(build_batch(&entries, 0, BatchMode::Train, &mut rng).is_err());
        assert!(build_batch(&entries, 7, BatchMode::Train, &mut rng).is_err());
        assert!(build_batch(&entries[..1], 4, BatchMode::Train, &mut rng).is_err());
    }
}
