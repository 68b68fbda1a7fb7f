//! Class balance and classifier evaluation.

use crate::data::{KeepList, LabelVector};
use crate::error::{Error, Result};

/// Probabilities are clamped to at least this value before taking logs.
pub const PROB_FLOOR: f64 = 1e-12;
const ROW_SUM_TOL: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ClassHistogram {
    counts: Vec<u64>,
    total: u64,
}

impl ClassHistogram {
    pub fn new(counts: Vec<u64>) -> Result<Self> {
        let total = counts.iter().sum();
        if total == 0 {
            return Err(Error::Contract("histogram has no samples".into()));
        }
        Ok(Self { counts, total })
    }

    pub fn counts(&self) -> &[u64] {
        &self.counts
    }

    pub fn total(&self) -> u64 {
        self.total
    }

    pub fn n_classes(&self) -> usize {
        self.counts.len()
    }
}

/// Normalized Shannon entropy of the class distribution, `H(p) / log(c)`,
/// with `0 · log 0 = 0`. Equals 1 exactly for a uniform histogram.
pub fn balance(hist: &ClassHistogram) -> Result<f64> {
    normalized_entropy(hist, f64::ln)
}

/// [`balance`] computed with logarithms to the given base.
pub fn balance_in_base(hist: &ClassHistogram, base: f64) -> Result<f64> {
    if !(base > 0.0 && base != 1.0 && base.is_finite()) {
        return Err(Error::Domain(format!("invalid logarithm base {base}")));
    }
    normalized_entropy(hist, |x| x.log(base))
}

fn normalized_entropy(hist: &ClassHistogram, log: impl Fn(f64) -> f64) -> Result<f64> {
    let c = hist.n_classes();
    if c < 2 {
        return Err(Error::Domain(format!(
            "balance needs at least 2 classes, got {c}"
        )));
    }
    let first = hist.counts[0];
    if hist.counts.iter().all(|&n| n == first) {
        return Ok(1.0);
    }
    let total = hist.total as f64;
    let entropy: f64 = hist
        .counts
        .iter()
        .filter(|&&n| n > 0)
        .map(|&n| {
            let p = n as f64 / total;
            -p * log(p)
        })
        .sum();
    Ok((entropy / log(c as f64)).clamp(0.0, 1.0))
}

/// Counts per declared class over the kept samples (all samples if `keep` is
/// `None`). Classes emptied by pruning keep a zero count.
pub fn histogram(labels: &LabelVector, keep: Option<&KeepList>) -> Result<ClassHistogram> {
    let mut counts = vec![0u64; labels.n_classes() as usize];
    let ids = labels.class_ids();
    match keep {
        Some(kl) => {
            if kl.source_n() != labels.n_samples() {
                return Err(Error::Contract(format!(
                    "keep-list indexes {} samples but there are {} labels",
                    kl.source_n(),
                    labels.n_samples()
                )));
            }
            for &i in kl.indices() {
                counts[ids[i] as usize] += 1;
            }
        }
        None => {
            for &c in ids {
                counts[c as usize] += 1;
            }
        }
    }
    ClassHistogram::new(counts)
}

fn check_probs(probs: &[f64], n_classes: usize, labels: &[u32]) -> Result<()> {
    if n_classes == 0 || probs.len() != labels.len() * n_classes {
        return Err(Error::Contract(format!(
            "probability matrix of length {} does not match {} labels x {n_classes} classes",
            probs.len(),
            labels.len()
        )));
    }
    if labels.is_empty() {
        return Err(Error::Contract("no samples to evaluate".into()));
    }
    for (i, row) in probs.chunks_exact(n_classes).enumerate() {
        let sum: f64 = row.iter().sum();
        if sum.is_nan() || (sum - 1.0).abs() > ROW_SUM_TOL || row.iter().any(|p| p.is_nan() || *p < 0.0) {
            return Err(Error::Contract(format!(
                "row {i} is not a probability distribution (sum {sum})"
            )));
        }
        if labels[i] as usize >= n_classes {
            return Err(Error::Contract(format!(
                "label {} at row {i} is not below {n_classes}",
                labels[i]
            )));
        }
    }
    Ok(())
}

/// Mean negative log-probability of the true class.
pub fn cross_entropy(probs: &[f64], n_classes: usize, labels: &[u32]) -> Result<f64> {
    check_probs(probs, n_classes, labels)?;
    let total: f64 = probs
        .chunks_exact(n_classes)
        .zip(labels)
        .map(|(row, &y)| -row[y as usize].max(PROB_FLOOR).ln())
        .sum();
    Ok(total / labels.len() as f64)
}

/// Index of the largest entry, lowest index on ties.
pub fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

/// Fraction of rows whose argmax equals the label.
pub fn accuracy(probs: &[f64], n_classes: usize, labels: &[u32]) -> Result<f64> {
    check_probs(probs, n_classes, labels)?;
    let hits = probs
        .chunks_exact(n_classes)
        .zip(labels)
        .filter(|(row, &y)| argmax(row) == y as usize)
        .count();
    Ok(hits as f64 / labels.len() as f64)
}
