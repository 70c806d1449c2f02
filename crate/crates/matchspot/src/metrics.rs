//! Detection metrics: AUC, EER, F1, FRR@FAR. All reported as percentages.
//!
//! Conventions (fixed so results reproduce bit-for-bit):
//! - Thresholding predicts positive when score >= threshold; the sweep visits
//!   every distinct score plus a predict-nothing sentinel above the maximum.
//! - AUC is the Mann-Whitney statistic: probability a random positive
//!   outscores a random negative, ties counting one half.
//! - EER linearly interpolates (FAR, FRR) between the adjacent sweep points
//!   where FAR − FRR changes sign.
//! - FRR@FAR takes the smallest threshold whose FAR does not exceed the
//!   target (conservative step convention).

use std::io::{BufRead, Write};
use std::path::Path;

use crate::error::{Error, Result};

/// Parallel scores and binary labels; both classes must be present.
pub struct ScoredSet {
    scores: Vec<f64>,
    labels: Vec<u8>,
    positives: usize,
    negatives: usize,
}

impl ScoredSet {
    pub fn new(scores: Vec<f64>, labels: Vec<u8>) -> Result<Self> {
        if scores.len() != labels.len() {
            return Err(Error::Input(format!(
                "scores ({}) and labels ({}) differ in length",
                scores.len(),
                labels.len()
            )));
        }
        if let Some(bad) = labels.iter().find(|&&l| l > 1) {
            return Err(Error::Input(format!("labels must be 0/1, got {bad}")));
        }
        if let Some(bad) = scores.iter().find(|s| !s.is_finite()) {
            return Err(Error::Input(format!("non-finite score {bad}")));
        }
        let positives = labels.iter().filter(|&&l| l == 1).count();
        let negatives = labels.len() - positives;
        if positives == 0 || negatives == 0 {
            return Err(Error::Input(
                "scored set needs at least one positive and one negative".to_string(),
            ));
        }
        Ok(ScoredSet { scores, labels, positives, negatives })
    }

    pub fn len(&self) -> usize {
        self.scores.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scores.is_empty()
    }

    pub fn positives(&self) -> usize {
        self.positives
    }

    pub fn negatives(&self) -> usize {
        self.negatives
    }

    /// (FAR, FRR) at each sweep threshold, ordered by descending threshold,
    /// starting from the predict-nothing point (FAR 0, FRR 1). Fractions in
    /// [0, 1], not percentages.
    pub fn sweep(&self) -> Vec<(f64, f64)> {
        let mut order: Vec<usize> = (0..self.scores.len()).collect();
        order.sort_by(|&a, &b| {
            self.scores[b]
                .partial_cmp(&self.scores[a])
                .unwrap()
                .then(a.cmp(&b))
        });
        let mut points = vec![(0.0, 1.0)];
        let (mut fp, mut tp) = (0usize, 0usize);
        let mut i = 0;
        while i < order.len() {
            // consume the whole tie group at this score
            let here = self.scores[order[i]];
            while i < order.len() && self.scores[order[i]] == here {
                if self.labels[order[i]] == 1 {
                    tp += 1;
                } else {
                    fp += 1;
                }
                i += 1;
            }
            let far = fp as f64 / self.negatives as f64;
            let frr = (self.positives - tp) as f64 / self.positives as f64;
            points.push((far, frr));
        }
        points
    }
}

/// Area under the ROC curve as a percentage. Mann-Whitney form via tie-averaged
/// ranks: exact for integer-and-half counts.
pub fn auc(s: &ScoredSet) -> f64 {
    let n = s.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| s.scores[a].partial_cmp(&s.scores[b]).unwrap().then(a.cmp(&b)));
    let mut rank = vec![0.0f64; n];
    let mut i = 0;
    while i < n {
        let mut j = i + 1;
        while j < n && s.scores[order[j]] == s.scores[order[i]] {
            j += 1;
        }
        // ranks i+1 ..= j averaged over the tie group
        let avg = (i + 1 + j) as f64 / 2.0;
        for k in i..j {
            rank[order[k]] = avg;
        }
        i = j;
    }
    let rank_sum: f64 = (0..n).filter(|&k| s.labels[k] == 1).map(|k| rank[k]).sum();
    let p = s.positives() as f64;
    let neg = s.negatives() as f64;
    let numerator = rank_sum - p * (p + 1.0) / 2.0;
    numerator / (p * neg) * 100.0
}

/// Equal error rate as a percentage.
pub fn eer(s: &ScoredSet) -> f64 {
    let points = s.sweep();
    eer_from_sweep(&points)
}

/// Shared crossing rule so an independent sweep can reuse the pinned
/// interpolation convention while recomputing every count itself.
pub fn eer_from_sweep(points: &[(f64, f64)]) -> f64 {
    let mut prev = points[0];
    for &(far, frr) in points {
        let diff = far - frr;
        if diff == 0.0 {
            return far * 100.0;
        }
        if diff > 0.0 {
            let (f0, r0) = prev;
            let denom = (far - f0) - (frr - r0);
            let t = (r0 - f0) / denom;
            return (f0 + t * (far - f0)) * 100.0;
        }
        prev = (far, frr);
    }
    // FAR never reaches FRR: everything was separable
    0.0
}

/// F1 score as a percentage at a fixed decision threshold (default 0.5 at the
/// call sites). Zero-division (no predicted or no true positives) yields 0.
pub fn f1(s: &ScoredSet, threshold: f64) -> f64 {
    let (mut tp, mut fp, mut fn_) = (0usize, 0usize, 0usize);
    for (score, label) in s.scores.iter().zip(&s.labels) {
        let pred = *score >= threshold;
        match (pred, label) {
            (true, 1) => tp += 1,
            (true, 0) => fp += 1,
            (false, 1) => fn_ += 1,
            _ => {}
        }
    }
    if tp == 0 {
        return 0.0;
    }
    let precision = tp as f64 / (tp + fp) as f64;
    let recall = tp as f64 / (tp + fn_) as f64;
    2.0 * precision * recall / (precision + recall) * 100.0
}

/// False-reject rate (percentage) at the smallest threshold whose FAR stays
/// at or below `far_target` (a fraction, e.g. 0.05).
pub fn frr_at_far(s: &ScoredSet, far_target: f64) -> f64 {
    let points = s.sweep();
    let mut best = points[0];
    for &(far, frr) in &points {
        if far <= far_target {
            best = (far, frr);
        }
    }
    best.1 * 100.0
}

/// One line of the score-file protocol: `clip_id,keyword,label,score`.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreRecord {
    pub clip_id: String,
    pub keyword: String,
    pub label: u8,
    pub score: f64,
}

pub fn write_scores(path: &Path, records: &[ScoreRecord]) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = std::io::BufWriter::new(file);
    writeln!(w, "clip_id,keyword,label,score").map_err(|e| Error::io(path, e))?;
    for r in records {
        writeln!(w, "{},{},{},{:.9e}", r.clip_id, r.keyword, r.label, r.score)
            .map_err(|e| Error::io(path, e))?;
    }
    Ok(())
}

pub fn read_scores(path: &Path) -> Result<Vec<ScoreRecord>> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let reader = std::io::BufReader::new(file);
    let mut out = Vec::new();
    for (lineno, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if lineno == 0 && line.starts_with("clip_id") {
            continue;
        }
        if line.trim().is_empty() {
            continue;
        }
        // keyword may contain no commas by construction (charset has none)
        let parts: Vec<&str> = line.splitn(4, ',').collect();
        if parts.len() != 4 {
            return Err(Error::format(path, format!("line {}: want 4 fields", lineno + 1)));
        }
        let label: u8 = parts[2]
            .parse()
            .map_err(|_| Error::format(path, format!("line {}: bad label {:?}", lineno + 1, parts[2])))?;
        let score: f64 = parts[3]
            .parse()
            .map_err(|_| Error::format(path, format!("line {}: bad score {:?}", lineno + 1, parts[3])))?;
        out.push(ScoreRecord {
            clip_id: parts[0].to_string(),
            keyword: parts[1].to_string(),
            label,
            score,
        });
    }
    Ok(out)
}

/// Metric report rows: one row per (subset, metric).
pub fn write_report(path: &Path, rows: &[(String, String, f64)]) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = std::io::BufWriter::new(file);
    writeln!(w, "subset,metric,value").map_err(|e| Error::io(path, e))?;
    for (subset, metric, value) in rows {
        writeln!(w, "{subset},{metric},{value:.6}").map_err(|e| Error::io(path, e))?;
    }
    Ok(())
}

/// ROC points for external plotting: threshold sweep as CSV.
pub fn write_roc(path: &Path, s: &ScoredSet) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = std::io::BufWriter::new(file);
    writeln!(w, "far,frr").map_err(|e| Error::io(path, e))?;
    for (far, frr) in s.sweep() {
        writeln!(w, "{far:.9},{frr:.9}").map_err(|e| Error::io(path, e))?;
    }
    Ok(())
}
