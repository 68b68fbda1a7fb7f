//! Multinomial linear probe and the repeated-subsampling learning-curve
//! harness.
//!
//! The probe minimizes mean cross-entropy plus `(λ/2)‖W‖²` (bias not
//! penalized) by plain mini-batch gradient descent with a constant learning
//! rate. Weights start uniform in `(−0.01, 0.01)`, biases at zero.
//!
//! For learning-curve cell (grid index `i`, repeat `j`) the subsample seed is
//! `seed ^ mix(i, j)` and the probe is trained with `splitmix64` of that seed.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng as _;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{EmbeddingMatrix, KeepList, LabelVector};
use crate::error::{Error, Result};
use crate::metrics;
use crate::pruner::subsample;
use crate::rng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ProbeConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub l2_penalty: f64,
    pub seed: u64,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        Self {
            epochs: 100,
            batch_size: 128,
            learning_rate: 0.1,
            l2_penalty: 1e-4,
            seed: 0,
        }
    }
}

impl ProbeConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::Domain("epochs and batch_size must be positive".into()));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Domain(format!(
                "learning_rate must be positive, got {}",
                self.learning_rate
            )));
        }
        if !(self.l2_penalty > 0.0 && self.l2_penalty.is_finite()) {
            return Err(Error::Domain(format!(
                "l2_penalty must be positive, got {}",
                self.l2_penalty
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProbeModel {
    /// `n_classes × n_dims`, row-major.
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
    pub n_dims: usize,
}

impl ProbeModel {
    pub fn zeros(n_classes: usize, n_dims: usize) -> Self {
        Self {
            weights: vec![0.0; n_classes * n_dims],
            bias: vec![0.0; n_classes],
            n_dims,
        }
    }

    pub fn n_classes(&self) -> usize {
        self.bias.len()
    }

    fn logits_into(&self, x: &[f64], out: &mut [f64]) {
        for (c, o) in out.iter_mut().enumerate() {
            let w = &self.weights[c * self.n_dims..(c + 1) * self.n_dims];
            *o = self.bias[c] + w.iter().zip(x).map(|(a, b)| a * b).sum::<f64>();
        }
    }
}

/// In-place softmax with max subtraction.
pub fn softmax(logits: &mut [f64]) {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for v in logits.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    logits.iter_mut().for_each(|v| *v /= sum);
}

/// Regularized objective over the given samples (`x` row-major).
pub fn objective(model: &ProbeModel, x: &[f64], labels: &[u32], l2_penalty: f64) -> f64 {
    let d = model.n_dims;
    let mut logits = vec![0.0; model.n_classes()];
    let mut total = 0.0;
    for (row, &y) in x.chunks_exact(d).zip(labels) {
        model.logits_into(row, &mut logits);
        let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + logits.iter().map(|l| (l - max).exp()).sum::<f64>().ln();
        total += lse - logits[y as usize];
    }
    let norm2: f64 = model.weights.iter().map(|w| w * w).sum();
    total / labels.len() as f64 + 0.5 * l2_penalty * norm2
}

/// Gradient of [`objective`] with respect to `(weights, bias)`.
pub fn gradient(model: &ProbeModel, x: &[f64], labels: &[u32], l2_penalty: f64) -> (Vec<f64>, Vec<f64>) {
    let d = model.n_dims;
    let c = model.n_classes();
    let mut gw = vec![0.0; c * d];
    let mut gb = vec![0.0; c];
    let mut p = vec![0.0; c];
    for (row, &y) in x.chunks_exact(d).zip(labels) {
        model.logits_into(row, &mut p);
        softmax(&mut p);
        p[y as usize] -= 1.0;
        for k in 0..c {
            let err = p[k];
            gb[k] += err;
            for (g, xv) in gw[k * d..(k + 1) * d].iter_mut().zip(row) {
                *g += err * xv;
            }
        }
    }
    let inv = 1.0 / labels.len() as f64;
    for (g, w) in gw.iter_mut().zip(&model.weights) {
        *g = *g * inv + l2_penalty * w;
    }
    gb.iter_mut().for_each(|g| *g *= inv);
    (gw, gb)
}

fn train_rows(x: &[f64], labels: &[u32], n_dims: usize, n_classes: usize, cfg: &ProbeConfig) -> ProbeModel {
    let mut rng = rng::seeded(cfg.seed);
    let mut model = ProbeModel::zeros(n_classes, n_dims);
    for w in &mut model.weights {
        *w = rng.random_range(-0.01..0.01);
    }
    let n = labels.len();
    let mut order: Vec<usize> = (0..n).collect();
    let mut batch_x = Vec::with_capacity(cfg.batch_size * n_dims);
    let mut batch_y = Vec::with_capacity(cfg.batch_size);
    for _ in 0..cfg.epochs {
        order.shuffle(&mut rng);
        for chunk in order.chunks(cfg.batch_size) {
            batch_x.clear();
            batch_y.clear();
            for &i in chunk {
                batch_x.extend_from_slice(&x[i * n_dims..(i + 1) * n_dims]);
                batch_y.push(labels[i]);
            }
            let (gw, gb) = gradient(&model, &batch_x, &batch_y, cfg.l2_penalty);
            for (w, g) in model.weights.iter_mut().zip(&gw) {
                *w -= cfg.learning_rate * g;
            }
            for (b, g) in model.bias.iter_mut().zip(&gb) {
                *b -= cfg.learning_rate * g;
            }
        }
    }
    model
}

/// Trains a probe on all rows of `x`; the result is a pure function of the
/// inputs and `cfg.seed`.
pub fn train_probe(x: &EmbeddingMatrix, y: &LabelVector, cfg: &ProbeConfig) -> Result<ProbeModel> {
    cfg.validate()?;
    if x.n_samples() != y.n_samples() {
        return Err(Error::Contract(format!(
            "{} embeddings but {} labels",
            x.n_samples(),
            y.n_samples()
        )));
    }
    let c = y.n_classes() as usize;
    if x.n_samples() < c {
        return Err(Error::Contract(format!(
            "need at least as many samples as classes ({} < {c})",
            x.n_samples()
        )));
    }
    Ok(train_rows(&x.to_f64(), y.class_ids(), x.n_dims(), c, cfg))
}

/// Row-stochastic `N × c` class probabilities.
pub fn predict_probs(model: &ProbeModel, x: &EmbeddingMatrix) -> Result<Vec<f64>> {
    if x.n_dims() != model.n_dims {
        return Err(Error::Contract(format!(
            "probe expects {} dimensions, data has {}",
            model.n_dims,
            x.n_dims()
        )));
    }
    Ok(probs_rows(model, &x.to_f64()))
}

fn probs_rows(model: &ProbeModel, x: &[f64]) -> Vec<f64> {
    let c = model.n_classes();
    let mut out = vec![0.0; x.len() / model.n_dims * c];
    for (row, dst) in x.chunks_exact(model.n_dims).zip(out.chunks_exact_mut(c)) {
        model.logits_into(row, dst);
        softmax(dst);
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurveRow {
    #[serde(rename = "N")]
    pub n: usize,
    pub mean_loss: f64,
    pub std_loss: f64,
    pub mean_acc: f64,
    pub std_acc: f64,
    pub repeats: usize,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct LearningCurve {
    pub rows: Vec<CurveRow>,
}

impl LearningCurve {
    /// `(N, mean_loss)` pairs for power-law fitting.
    pub fn loss_points(&self) -> Vec<(f64, f64)> {
        self.rows.iter().map(|r| (r.n as f64, r.mean_loss)).collect()
    }
}

/// A fixed evaluation set.
pub struct TestSet<'a> {
    pub x: &'a EmbeddingMatrix,
    pub y: &'a LabelVector,
}

fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Trains `repeats` probes at each training-set size in `n_grid`, each on a
/// fresh random subset of the kept samples, and evaluates them on `test`.
#[allow(clippy::too_many_arguments)]
pub fn learning_curve(
    x: &EmbeddingMatrix,
    y: &LabelVector,
    keep: &KeepList,
    test: TestSet<'_>,
    n_grid: &[usize],
    repeats: usize,
    cfg: &ProbeConfig,
) -> Result<LearningCurve> {
    cfg.validate()?;
    if x.n_samples() != y.n_samples() || test.x.n_samples() != test.y.n_samples() {
        return Err(Error::Contract("embedding and label counts differ".into()));
    }
    if test.x.n_dims() != x.n_dims() || test.y.n_classes() != y.n_classes() {
        return Err(Error::Contract(
            "test set dimensions or class count differ from the training pool".into(),
        ));
    }
    keep.check_source(x.n_samples())?;
    if repeats == 0 {
        return Err(Error::Domain("repeats must be at least 1".into()));
    }
    if n_grid.is_empty() || n_grid.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::Domain(format!("N-grid must be non-empty and strictly increasing: {n_grid:?}")));
    }
    let c = y.n_classes() as usize;
    for &n in n_grid {
        if n > keep.len() {
            return Err(Error::Contract(format!(
                "N={n} exceeds the {} samples kept",
                keep.len()
            )));
        }
        if n < c {
            return Err(Error::Contract(format!("N={n} is below the class count {c}")));
        }
    }

    let d = x.n_dims();
    let pool = x.to_f64();
    let test_x = test.x.to_f64();
    let test_y = test.y.class_ids();
    let cells: Vec<(usize, usize)> = (0..n_grid.len())
        .flat_map(|i| (0..repeats).map(move |j| (i, j)))
        .collect();
    let results: Vec<Result<(f64, f64)>> = cells
        .par_iter()
        .map(|&(i, j)| {
            let cell_seed = cfg.seed ^ rng::mix(i as u32, j as u32);
            let sub = subsample(keep, n_grid[i], cell_seed)?;
            let mut xs = Vec::with_capacity(sub.len() * d);
            let mut ys = Vec::with_capacity(sub.len());
            for &k in sub.indices() {
                xs.extend_from_slice(&pool[k * d..(k + 1) * d]);
                ys.push(y.class_ids()[k]);
            }
            let train_cfg = ProbeConfig {
                seed: rng::splitmix64(cell_seed),
                ..cfg.clone()
            };
            let model = train_rows(&xs, &ys, d, c, &train_cfg);
            let probs = probs_rows(&model, &test_x);
            Ok((
                metrics::cross_entropy(&probs, c, test_y)?,
                metrics::accuracy(&probs, c, test_y)?,
            ))
        })
        .collect();

    let mut rows = Vec::with_capacity(n_grid.len());
    let mut it = results.into_iter();
    for &n in n_grid {
        let mut losses = Vec::with_capacity(repeats);
        let mut accs = Vec::with_capacity(repeats);
        for _ in 0..repeats {
            let (l, a) = it.next().expect("one result per cell")?;
            losses.push(l);
            accs.push(a);
        }
        let (mean_loss, std_loss) = mean_std(&losses);
        let (mean_acc, std_acc) = mean_std(&accs);
        rows.push(CurveRow {
            n,
            mean_loss,
            std_loss,
            mean_acc,
            std_acc,
            repeats,
        });
    }
    Ok(LearningCurve { rows })
}

/// `points` log-spaced integer sizes between `lo` and `hi` inclusive,
/// duplicates after rounding removed.
pub fn log_grid(lo: usize, hi: usize, points: usize) -> Result<Vec<usize>> {
    if lo == 0 || lo > hi || points == 0 {
        return Err(Error::Domain(format!(
            "invalid log grid: lo={lo}, hi={hi}, points={points}"
        )));
    }
    if points == 1 {
        return Ok(vec![hi]);
    }
    let (a, b) = ((lo as f64).ln(), (hi as f64).ln());
    let mut grid: Vec<usize> = (0..points)
        .map(|i| (a + (b - a) * i as f64 / (points - 1) as f64).exp().round() as usize)
        .collect();
    grid[0] = lo;
    grid[points - 1] = hi;
    grid.dedup();
    Ok(grid)
}

/// Default grid: 10 log-spaced sizes from `max(c, pool / 100)` to `pool`.
pub fn default_grid(pool: usize, n_classes: usize) -> Result<Vec<usize>> {
    log_grid(n_classes.max(pool / 100).max(1), pool, 10)
}

pub fn write_curve(curve: &LearningCurve, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_err(path, e))?;
    if curve.rows.is_empty() {
        w.write_record(["N", "mean_loss", "std_loss", "mean_acc", "std_acc", "repeats"])
            .map_err(|e| csv_err(path, e))?;
    }
    for row in &curve.rows {
        w.serialize(row).map_err(|e| csv_err(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_curve(path: impl AsRef<Path>) -> Result<LearningCurve> {
    let path = path.as_ref();
    let mut r = csv::Reader::from_path(path).map_err(|e| csv_err(path, e))?;
    let headers = r.headers().map_err(|e| csv_err(path, e))?.clone();
    if headers != vec!["N", "mean_loss", "std_loss", "mean_acc", "std_acc", "repeats"] {
        return Err(Error::Parse {
            path: path.to_path_buf(),
            message: format!("unexpected learning-curve header {headers:?}"),
        });
    }
    let rows = r
        .deserialize()
        .collect::<std::result::Result<Vec<CurveRow>, _>>()
        .map_err(|e| csv_err(path, e))?;
    Ok(LearningCurve { rows })
}

pub(crate) fn csv_err(path: &Path, e: csv::Error) -> Error {
    Error::Parse {
        path: path.to_path_buf(),
        message: e.to_string(),
    }
}
