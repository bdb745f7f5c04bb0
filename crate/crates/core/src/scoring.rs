//! Conflict scores, conflict-ordered partitions and score distribution reports.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::probe::ProbeResult;

/// Fraction of sampled responses that matched the gold answer.
/// Higher means less conflict.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConflictScore {
    pub id: String,
    pub n_correct: usize,
    pub n_total: usize,
    pub score: f64,
}

impl ConflictScore {
    pub fn new(id: impl Into<String>, n_correct: usize, n_total: usize) -> Self {
        ConflictScore {
            id: id.into(),
            n_correct,
            n_total,
            score: n_correct as f64 / n_total as f64,
        }
    }
}

pub fn compute_scores(results: &[ProbeResult]) -> Result<Vec<ConflictScore>> {
    results
        .iter()
        .map(|r| {
            let per_variant = r.variants.first().map(|v| v.responses.len()).unwrap_or(0);
            if per_variant == 0 || r.variants.iter().any(|v| v.responses.len() != per_variant) {
                return Err(Error::invalid(format!(
                    "probe result for {:?} is incomplete",
                    r.sample_id
                )));
            }
            Ok(ConflictScore::new(r.sample_id.clone(), r.n_correct(), r.n_total()))
        })
        .collect()
}

pub const QUARTILE_LABELS: [&str; 4] = ["wrong", "might-wrong", "might-right", "right"];

pub fn subset_label(k: usize, subset: usize) -> String {
    if k == 4 {
        QUARTILE_LABELS[subset].to_string()
    } else {
        format!("subset-{subset}")
    }
}

/// One row of a partition file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PartitionRecord {
    pub id: String,
    pub subset: usize,
    pub label: String,
}

/// Subset 0 holds the most conflicting samples, subset `k - 1` the least.
#[derive(Debug, Clone, PartialEq)]
pub struct PartitionedDataset {
    pub k: usize,
    /// `(id, subset)` in the order of the scores that were partitioned.
    pub entries: Vec<(String, usize)>,
    index: HashMap<String, usize>,
}

impl PartitionedDataset {
    pub fn from_entries(k: usize, entries: Vec<(String, usize)>) -> Result<Self> {
        if k < 2 {
            return Err(Error::invalid("partition needs k >= 2"));
        }
        let mut index = HashMap::with_capacity(entries.len());
        for (id, subset) in &entries {
            if *subset >= k {
                return Err(Error::invalid(format!("subset {subset} out of range for k = {k}")));
            }
            if index.insert(id.clone(), *subset).is_some() {
                return Err(Error::invalid(format!("duplicate id {id:?} in partition")));
            }
        }
        Ok(PartitionedDataset { k, entries, index })
    }

    pub fn subset_of(&self, id: &str) -> Option<usize> {
        self.index.get(id).copied()
    }

    pub fn label_of(&self, id: &str) -> Option<String> {
        self.subset_of(id).map(|s| subset_label(self.k, s))
    }

    pub fn sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.k];
        for (_, s) in &self.entries {
            sizes[*s] += 1;
        }
        sizes
    }

    pub fn members(&self, subset: usize) -> impl Iterator<Item = &str> {
        self.entries
            .iter()
            .filter(move |(_, s)| *s == subset)
            .map(|(id, _)| id.as_str())
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn records(&self) -> Vec<PartitionRecord> {
        self.entries
            .iter()
            .map(|(id, s)| PartitionRecord {
                id: id.clone(),
                subset: *s,
                label: subset_label(self.k, *s),
            })
            .collect()
    }

    pub fn from_records(records: Vec<PartitionRecord>) -> Result<Self> {
        // every subset of a rank partition is non-empty, so k is recoverable
        let k = records.iter().map(|r| r.subset + 1).max().unwrap_or(0);
        Self::from_entries(k, records.into_iter().map(|r| (r.id, r.subset)).collect())
    }
}

/// Stable ascending sort by score (ties keep input order); rank `r` goes to
/// subset `floor(r * k / N)`, so subset sizes differ by at most one.
pub fn partition(scores: &[ConflictScore], k: usize) -> Result<PartitionedDataset> {
    if k < 2 {
        return Err(Error::invalid(format!("k must be >= 2, got {k}")));
    }
    let n = scores.len();
    if k > n {
        return Err(Error::invalid(format!("cannot split {n} samples into {k} subsets")));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| scores[a].score.total_cmp(&scores[b].score));
    let mut subset = vec![0usize; n];
    for (rank, &i) in order.iter().enumerate() {
        subset[i] = rank * k / n;
    }
    let entries = scores.iter().zip(subset).map(|(s, sub)| (s.id.clone(), sub)).collect();
    PartitionedDataset::from_entries(k, entries)
}

#[derive(Debug, Clone, PartialEq)]
pub struct HistogramBin {
    pub lo: f64,
    pub hi: f64,
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScoreReport {
    pub histogram: Vec<HistogramBin>,
    pub bandwidth: f64,
    /// `(x, density)` at 101 evenly spaced points on [0, 1].
    pub kde: Vec<(f64, f64)>,
}

pub const KDE_POINTS: usize = 101;
// Keeps the kernel resolvable on the 0.01 grid.
const MIN_BANDWIDTH: f64 = 0.02;

fn quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

/// Silverman's rule of thumb, `0.9 * min(sd, IQR / 1.34) * n^(-1/5)`,
/// falling back to whichever spread measure is non-zero.
pub fn silverman_bandwidth(xs: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let sd = if xs.len() > 1 {
        (xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
    } else {
        0.0
    };
    let mut sorted = xs.to_vec();
    sorted.sort_by(f64::total_cmp);
    let iqr = (quantile(&sorted, 0.75) - quantile(&sorted, 0.25)) / 1.34;
    let spread = match (sd > 0.0, iqr > 0.0) {
        (true, true) => sd.min(iqr),
        (true, false) => sd,
        (false, true) => iqr,
        (false, false) => 0.0,
    };
    (0.9 * spread * n.powf(-0.2)).max(MIN_BANDWIDTH)
}

/// Gaussian KDE on [0, 1] with reflection at both ends, so no mass leaks
/// past the score range.
pub fn kde_reflected(xs: &[f64], bandwidth: f64, points: usize) -> Vec<(f64, f64)> {
    let norm = 1.0 / (xs.len() as f64 * bandwidth * (2.0 * std::f64::consts::PI).sqrt());
    (0..points)
        .map(|i| {
            let x = i as f64 / (points - 1) as f64;
            let mut acc = 0.0;
            for &xi in xs {
                for shift in [-2.0, 0.0, 2.0] {
                    for img in [xi + shift, -xi + shift] {
                        let z = (x - img) / bandwidth;
                        acc += (-0.5 * z * z).exp();
                    }
                }
            }
            (x, acc * norm)
        })
        .collect()
}

pub fn score_report(scores: &[ConflictScore], bins: usize) -> Result<ScoreReport> {
    if scores.is_empty() {
        return Err(Error::invalid("no scores to report"));
    }
    if bins == 0 {
        return Err(Error::invalid("bins must be >= 1"));
    }
    let xs: Vec<f64> = scores.iter().map(|s| s.score).collect();
    let mut counts = vec![0usize; bins];
    for &x in &xs {
        let b = ((x * bins as f64).floor() as usize).min(bins - 1);
        counts[b] += 1;
    }
    let histogram = counts
        .into_iter()
        .enumerate()
        .map(|(i, count)| HistogramBin {
            lo: i as f64 / bins as f64,
            hi: (i + 1) as f64 / bins as f64,
            count,
        })
        .collect();
    let bandwidth = silverman_bandwidth(&xs);
    Ok(ScoreReport {
        histogram,
        bandwidth,
        kde: kde_reflected(&xs, bandwidth, KDE_POINTS),
    })
}

impl ScoreReport {
    /// Two-section CSV: `histogram` rows then `kde` rows, each with its own header.
    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        out.push_str("section,bin_lo,bin_hi,count\n");
        for b in &self.histogram {
            let _ = writeln!(out, "histogram,{:.6},{:.6},{}", b.lo, b.hi, b.count);
        }
        out.push_str("section,x,density\n");
        for (x, d) in &self.kde {
            let _ = writeln!(out, "kde,{x:.6},{d:.8}");
        }
        out
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_csv()).map_err(|e| Error::io(path, e))
    }

    pub fn kde_mass(&self) -> f64 {
        self.kde
            .windows(2)
            .map(|w| 0.5 * (w[0].1 + w[1].1) * (w[1].0 - w[0].0))
            .sum()
    }
}

fn average_ranks(xs: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..xs.len()).collect();
    idx.sort_by(|&a, &b| xs[a].total_cmp(&xs[b]));
    let mut ranks = vec![0.0; xs.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && xs[idx[j + 1]] == xs[idx[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0;
        for &k in &idx[i..=j] {
            ranks[k] = avg;
        }
        i = j + 1;
    }
    ranks
}

/// Spearman rank correlation with average ranks for ties. Zero when either
/// side is constant.
pub fn spearman(xs: &[f64], ys: &[f64]) -> f64 {
    assert_eq!(xs.len(), ys.len());
    let rx = average_ranks(xs);
    let ry = average_ranks(ys);
    let n = xs.len() as f64;
    let mx = rx.iter().sum::<f64>() / n;
    let my = ry.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in rx.iter().zip(&ry) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx).powi(2);
        syy += (b - my).powi(2);
    }
    if sxx == 0.0 || syy == 0.0 {
        0.0
    } else {
        sxy / (sxx * syy).sqrt()
    }
}
