//! Euclidean k-means: k-means++ seeding followed by Lloyd iterations.
//!
//! Assignment runs in parallel over points. Centroid sums are accumulated
//! per fixed-size block of points and the block partials are combined in
//! block order, so a fit is bit-identical for any number of worker threads.

use std::fs;
use std::path::{Path, PathBuf};

use rand::Rng as _;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{EmbeddingMatrix, LabelVector};
use crate::error::{Error, Result};
use crate::io::{write_embeddings, write_labels};
use crate::rng::{self, Rng};

/// Points per partial-sum block in the centroid update.
const UPDATE_BLOCK: usize = 4096;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct KMeansConfig {
    pub k: usize,
    pub max_iter: usize,
    /// Relative Frobenius centroid shift below which an init has converged.
    pub tol: f64,
    pub n_init: usize,
    pub seed: u64,
}

impl Default for KMeansConfig {
    fn default() -> Self {
        Self {
            k: 8,
            max_iter: 300,
            tol: 1e-6,
            n_init: 10,
            seed: 0,
        }
    }
}

impl KMeansConfig {
    pub fn new(k: usize) -> Self {
        Self {
            k,
            ..Self::default()
        }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn with_n_init(mut self, n_init: usize) -> Self {
        self.n_init = n_init;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.k == 0 || self.max_iter == 0 || self.n_init == 0 {
            return Err(Error::Domain(format!(
                "k, max_iter and n_init must be positive (k={}, max_iter={}, n_init={})",
                self.k, self.max_iter, self.n_init
            )));
        }
        if self.tol.is_nan() || self.tol <= 0.0 {
            return Err(Error::Domain(format!("tol must be positive, got {}", self.tol)));
        }
        Ok(())
    }
}

/// Nearest-centroid assignment of a set of points.
#[derive(Debug, Clone, PartialEq)]
pub struct Assignment {
    pub clusters: Vec<u32>,
    /// Euclidean distance to the assigned centroid.
    pub distances: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct KMeansModel {
    /// `k × n_dims`, row-major.
    pub centroids: Vec<f64>,
    pub n_dims: usize,
    pub assignments: Vec<u32>,
    pub distances: Vec<f64>,
    pub inertia: f64,
    pub iterations_run: usize,
    pub converged: bool,
    /// Which restart produced this model.
    pub best_init: usize,
    pub config: KMeansConfig,
}

impl KMeansModel {
    pub fn k(&self) -> usize {
        self.config.k
    }

    pub fn centroid(&self, c: usize) -> &[f64] {
        &self.centroids[c * self.n_dims..(c + 1) * self.n_dims]
    }

    pub fn cluster_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.k()];
        for &a in &self.assignments {
            sizes[a as usize] += 1;
        }
        sizes
    }
}

/// One restart of Lloyd's algorithm.
#[derive(Debug, Clone)]
pub struct LloydRun {
    pub seeds: Vec<usize>,
    pub centroids: Vec<f64>,
    pub assignment: Assignment,
    pub inertia: f64,
    /// Inertia after every assignment step, including the final one.
    pub history: Vec<f64>,
    pub iterations_run: usize,
    pub converged: bool,
}

struct Points {
    values: Vec<f64>,
    norms: Vec<f64>,
    n: usize,
    d: usize,
}

impl Points {
    fn new(x: &EmbeddingMatrix) -> Self {
        let values = x.to_f64();
        let d = x.n_dims();
        let norms = values.chunks_exact(d).map(dot_self).collect();
        Self {
            values,
            norms,
            n: x.n_samples(),
            d,
        }
    }

    fn row(&self, i: usize) -> &[f64] {
        &self.values[i * self.d..(i + 1) * self.d]
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn dot_self(a: &[f64]) -> f64 {
    dot(a, a)
}

fn sq_dist_direct(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Nearest centroid by `‖x‖² + ‖c‖² − 2x·c`, negatives clamped to zero,
/// ties to the lowest cluster index. Returns squared distances.
fn assign_squared(points: &Points, centroids: &[f64]) -> (Vec<u32>, Vec<f64>) {
    let d = points.d;
    let c_norms: Vec<f64> = centroids.chunks_exact(d).map(dot_self).collect();
    let pairs: Vec<(u32, f64)> = (0..points.n)
        .into_par_iter()
        .map(|i| {
            let x = points.row(i);
            let mut best = (0u32, f64::INFINITY);
            for (c, (centroid, cn)) in centroids.chunks_exact(d).zip(&c_norms).enumerate() {
                let d2 = (points.norms[i] + cn - 2.0 * dot(x, centroid)).max(0.0);
                if d2 < best.1 {
                    best = (c as u32, d2);
                }
            }
            best
        })
        .collect();
    pairs.into_iter().unzip()
}

/// Assigns each row of `x` to its nearest centroid.
pub fn assign(centroids: &[f64], n_dims: usize, x: &EmbeddingMatrix) -> Result<Assignment> {
    if n_dims == 0 || centroids.is_empty() || !centroids.len().is_multiple_of(n_dims) {
        return Err(Error::Contract(format!(
            "centroid buffer of length {} is not a k x {n_dims} matrix",
            centroids.len()
        )));
    }
    if x.n_dims() != n_dims {
        return Err(Error::Contract(format!(
            "centroids have {n_dims} dimensions, data has {}",
            x.n_dims()
        )));
    }
    let (clusters, d2) = assign_squared(&Points::new(x), centroids);
    Ok(Assignment {
        clusters,
        distances: d2.into_iter().map(f64::sqrt).collect(),
    })
}

/// k-means++ seeding: the first centre is uniform, each further centre is
/// drawn with probability proportional to the squared distance to the
/// nearest centre chosen so far. Returns the chosen row indices.
pub fn kmeans_plus_plus(x: &EmbeddingMatrix, k: usize, rng: &mut Rng) -> Result<Vec<usize>> {
    if k == 0 || k > x.n_samples() {
        return Err(Error::Contract(format!(
            "cannot seed {k} centres from {} samples",
            x.n_samples()
        )));
    }
    Ok(seed_plus_plus(&Points::new(x), k, rng))
}

fn seed_plus_plus(points: &Points, k: usize, rng: &mut Rng) -> Vec<usize> {
    let n = points.n;
    let mut chosen = Vec::with_capacity(k);
    let first = rng.random_range(0..n);
    chosen.push(first);
    let mut weights: Vec<f64> = (0..n)
        .map(|i| sq_dist_direct(points.row(i), points.row(first)))
        .collect();
    while chosen.len() < k {
        let total: f64 = weights.iter().sum();
        let next = if total > 0.0 {
            let target = rng.random::<f64>() * total;
            let mut acc = 0.0;
            let mut pick = None;
            for (i, &w) in weights.iter().enumerate() {
                if w <= 0.0 {
                    continue;
                }
                acc += w;
                pick = Some(i);
                if acc > target {
                    break;
                }
            }
            pick.expect("positive total weight implies a positive entry")
        } else {
            // Every remaining point coincides with a chosen centre.
            (0..n).find(|i| !chosen.contains(i)).expect("k <= n")
        };
        chosen.push(next);
        let c = points.row(next);
        for (i, w) in weights.iter_mut().enumerate() {
            *w = w.min(sq_dist_direct(points.row(i), c));
        }
    }
    chosen
}

/// Per-cluster sums and counts, combined block by block in index order.
fn centroid_sums(points: &Points, clusters: &[u32], k: usize) -> (Vec<f64>, Vec<usize>) {
    let d = points.d;
    let partials: Vec<(Vec<f64>, Vec<usize>)> = clusters
        .par_chunks(UPDATE_BLOCK)
        .enumerate()
        .map(|(b, block)| {
            let mut sums = vec![0.0; k * d];
            let mut counts = vec![0usize; k];
            for (off, &c) in block.iter().enumerate() {
                let c = c as usize;
                counts[c] += 1;
                let row = points.row(b * UPDATE_BLOCK + off);
                for (s, v) in sums[c * d..(c + 1) * d].iter_mut().zip(row) {
                    *s += v;
                }
            }
            (sums, counts)
        })
        .collect();
    let mut sums = vec![0.0; k * d];
    let mut counts = vec![0usize; k];
    for (ps, pc) in partials {
        sums.iter_mut().zip(&ps).for_each(|(s, p)| *s += p);
        counts.iter_mut().zip(&pc).for_each(|(c, p)| *c += p);
    }
    (sums, counts)
}

fn lloyd(points: &Points, cfg: &KMeansConfig, init: usize) -> LloydRun {
    let k = cfg.k;
    let mut rng = rng::seeded(cfg.seed ^ init as u64);
    let seeds = seed_plus_plus(points, k, &mut rng);
    let centroids: Vec<f64> = seeds.iter().flat_map(|&i| points.row(i).to_vec()).collect();
    lloyd_from(points, cfg, seeds, centroids)
}

fn lloyd_from(points: &Points, cfg: &KMeansConfig, seeds: Vec<usize>, mut centroids: Vec<f64>) -> LloydRun {
    let (k, d) = (cfg.k, points.d);
    let mut history = Vec::new();
    let mut converged = false;
    let mut iterations_run = 0;

    for it in 1..=cfg.max_iter {
        let (clusters, mut d2) = assign_squared(points, &centroids);
        history.push(d2.iter().sum());

        let (sums, counts) = centroid_sums(points, &clusters, k);
        let mut next = centroids.clone();
        for c in 0..k {
            if counts[c] > 0 {
                let inv = 1.0 / counts[c] as f64;
                for j in 0..d {
                    next[c * d + j] = sums[c * d + j] * inv;
                }
            }
        }
        // Re-seed each emptied cluster with the point farthest from its
        // current centroid (lowest index on ties).
        for c in (0..k).filter(|&c| counts[c] == 0) {
            let mut far = 0;
            for i in 1..points.n {
                if d2[i] > d2[far] {
                    far = i;
                }
            }
            next[c * d..(c + 1) * d].copy_from_slice(points.row(far));
            d2[far] = 0.0;
        }

        let shift = sq_dist_direct(&next, &centroids).sqrt();
        let scale = dot_self(&centroids).sqrt().max(1.0);
        centroids = next;
        iterations_run = it;
        if shift / scale < cfg.tol {
            converged = true;
            break;
        }
    }

    let (clusters, d2) = assign_squared(points, &centroids);
    let inertia = d2.iter().sum();
    history.push(inertia);
    LloydRun {
        seeds,
        centroids,
        assignment: Assignment {
            clusters,
            distances: d2.into_iter().map(f64::sqrt).collect(),
        },
        inertia,
        history,
        iterations_run,
        converged,
    }
}

fn check_fit_inputs(x: &EmbeddingMatrix, cfg: &KMeansConfig) -> Result<()> {
    cfg.validate()?;
    if cfg.k > x.n_samples() {
        return Err(Error::Contract(format!(
            "k={} exceeds the number of samples {}",
            cfg.k,
            x.n_samples()
        )));
    }
    Ok(())
}

/// Runs restart `init` alone (seeded with `cfg.seed ^ init`).
pub fn lloyd_run(x: &EmbeddingMatrix, cfg: &KMeansConfig, init: usize) -> Result<LloydRun> {
    check_fit_inputs(x, cfg)?;
    Ok(lloyd(&Points::new(x), cfg, init))
}

/// Best of `cfg.n_init` restarts by inertia (lowest restart index on ties).
pub fn kmeans_fit(x: &EmbeddingMatrix, cfg: &KMeansConfig) -> Result<KMeansModel> {
    check_fit_inputs(x, cfg)?;
    let points = Points::new(x);
    let runs: Vec<LloydRun> = (0..cfg.n_init)
        .into_par_iter()
        .map(|init| lloyd(&points, cfg, init))
        .collect();

    let mut best: Option<(usize, &LloydRun)> = None;
    for (init, run) in runs.iter().enumerate() {
        let mut sizes = vec![0usize; cfg.k];
        for &c in &run.assignment.clusters {
            sizes[c as usize] += 1;
        }
        if sizes.contains(&0) {
            continue;
        }
        if best.is_none_or(|(_, b)| run.inertia < b.inertia) {
            best = Some((init, run));
        }
    }
    let (best_init, run) = best.ok_or_else(|| {
        Error::Degenerate(format!(
            "every restart left a cluster empty; the data has fewer than k={} distinct points",
            cfg.k
        ))
    })?;
    Ok(KMeansModel {
        centroids: run.centroids.clone(),
        n_dims: points.d,
        assignments: run.assignment.clusters.clone(),
        distances: run.assignment.distances.clone(),
        inertia: run.inertia,
        iterations_run: run.iterations_run,
        converged: run.converged,
        best_init,
        config: cfg.clone(),
    })
}

/// Fits once per entry of `ks` (duplicates included) and reports inertia.
pub fn sweep_k(x: &EmbeddingMatrix, ks: &[usize], cfg: &KMeansConfig) -> Result<Vec<(usize, f64)>> {
    ks.iter()
        .map(|&k| {
            let cfg = KMeansConfig { k, ..cfg.clone() };
            kmeans_fit(x, &cfg).map(|m| (k, m.inertia))
        })
        .collect()
}

#[derive(Serialize, Deserialize)]
struct KMeansMeta {
    inertia: f64,
    iterations_run: usize,
    converged: bool,
    best_init: usize,
    cluster_sizes: Vec<usize>,
    config: KMeansConfig,
}

/// File paths of a saved model: `(centroids, assignments, scores, metadata)`.
pub fn model_paths(prefix: &Path) -> [PathBuf; 4] {
    [".centroids.emb", ".assign.lbl", ".scores.emb", ".kmeans.json"].map(|suffix| {
        let mut s = prefix.as_os_str().to_owned();
        s.push(suffix);
        PathBuf::from(s)
    })
}

/// Writes centroids (`EMB1`), assignments (`LBL1`, `n_classes = k`),
/// distances as an `N × 1` `EMB1` score file, and JSON metadata.
pub fn save_model(model: &KMeansModel, prefix: impl AsRef<Path>) -> Result<()> {
    let [cent_p, assign_p, scores_p, meta_p] = model_paths(prefix.as_ref());
    write_embeddings(
        &EmbeddingMatrix::from_f64(model.k(), model.n_dims, &model.centroids)?,
        cent_p,
    )?;
    write_labels(
        &LabelVector::new(model.assignments.clone(), model.k() as u32)?,
        assign_p,
    )?;
    write_embeddings(
        &EmbeddingMatrix::from_f64(model.distances.len(), 1, &model.distances)?,
        scores_p,
    )?;
    let meta = KMeansMeta {
        inertia: model.inertia,
        iterations_run: model.iterations_run,
        converged: model.converged,
        best_init: model.best_init,
        cluster_sizes: model.cluster_sizes(),
        config: model.config.clone(),
    };
    let text = serde_json::to_string_pretty(&meta).expect("plain data serializes");
    fs::write(&meta_p, text + "\n").map_err(|e| Error::io(&meta_p, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn four_points() -> EmbeddingMatrix {
        EmbeddingMatrix::from_rows(&[[0.0f32, 0.0], [0.0, 1.0], [10.0, 0.0], [10.0, 1.0]]).unwrap()
    }

    #[test]
    fn two_cluster_instance() {
        let model = kmeans_fit(&four_points(), &KMeansConfig::new(2).with_seed(3)).unwrap();
        assert!((model.inertia - 1.0).abs() < 1e-12);
        let mut cents: Vec<(f64, f64)> = (0..2).map(|c| (model.centroid(c)[0], model.centroid(c)[1])).collect();
        cents.sort_by(|a, b| a.0.total_cmp(&b.0));
        assert_eq!(cents, vec![(0.0, 0.5), (10.0, 0.5)]);
        assert!(model.converged);
    }

    #[test]
    fn k_equals_n_is_exact() {
        let model = kmeans_fit(&four_points(), &KMeansConfig::new(4)).unwrap();
        assert_eq!(model.inertia, 0.0);
        assert!(model.distances.iter().all(|&d| d == 0.0));
        assert_eq!(model.cluster_sizes(), vec![1; 4]);
    }

    #[test]
    fn k_one_is_column_mean() {
        let model = kmeans_fit(&four_points(), &KMeansConfig::new(1)).unwrap();
        assert_eq!(model.centroid(0), &[5.0, 0.5]);
        assert!((model.inertia - 101.0).abs() < 1e-9);
    }

    #[test]
    fn assign_basics_and_tie_break() {
        let pts = EmbeddingMatrix::from_rows(&[[1.0f32, 0.0], [5.0, 0.0]]).unwrap();
        let a = assign(&[0.0, 0.0, 10.0, 0.0], 2, &pts).unwrap();
        assert_eq!(a.clusters, vec![0, 0]);
        assert_eq!(a.distances[0], 1.0);
        assert_eq!(a.distances[1], 5.0);
        assert!(assign(&[0.0, 0.0, 10.0, 0.0], 3, &pts).is_err());
    }

    #[test]
    fn assign_agrees_with_fit() {
        let x = four_points();
        let model = kmeans_fit(&x, &KMeansConfig::new(2)).unwrap();
        let a = assign(&model.centroids, 2, &x).unwrap();
        assert_eq!(a.clusters, model.assignments);
        assert_eq!(a.distances, model.distances);
    }

    #[test]
    fn sweep_reports_each_entry() {
        let table = sweep_k(&four_points(), &[1, 2, 2, 4], &KMeansConfig::new(1)).unwrap();
        let ks: Vec<usize> = table.iter().map(|r| r.0).collect();
        assert_eq!(ks, vec![1, 2, 2, 4]);
        assert!((table[0].1 - 101.0).abs() < 1e-9);
        assert!((table[1].1 - 1.0).abs() < 1e-12);
        assert_eq!(table[3].1, 0.0);
    }

    #[test]
    fn config_and_size_errors() {
        let x = four_points();
        assert!(matches!(kmeans_fit(&x, &KMeansConfig::new(5)), Err(Error::Contract(_))));
        assert!(kmeans_fit(&x, &KMeansConfig::new(0)).is_err());
        let bad_tol = KMeansConfig { tol: 0.0, ..KMeansConfig::new(2) };
        assert!(kmeans_fit(&x, &bad_tol).is_err());
    }

    #[test]
    fn duplicate_points_beyond_k_are_degenerate() {
        let x = EmbeddingMatrix::from_rows(&[[1.0f32], [1.0], [1.0]]).unwrap();
        assert!(matches!(kmeans_fit(&x, &KMeansConfig::new(2)), Err(Error::Degenerate(_))));
    }

    #[test]
    fn empty_cluster_is_repaired() {
        // Seeds that leave one centre stranded beyond the data: force it by
        // starting from centroids where cluster 1 captures nothing.
        let x = EmbeddingMatrix::from_rows(&[[0.0f32], [1.0], [2.0], [9.0], [10.0]]).unwrap();
        let points = Points::new(&x);
        let (clusters, _) = assign_squared(&points, &[0.0, 100.0]);
        let (_, counts) = centroid_sums(&points, &clusters, 2);
        assert_eq!(counts, vec![5, 0]);
        // Lloyd moves the farthest point (10) into the empty cluster and
        // then settles on {0,1,2} / {9,10}.
        let run = lloyd_from(&points, &KMeansConfig::new(2), vec![], vec![0.0, 100.0]);
        assert_eq!(run.assignment.clusters, vec![0, 0, 0, 1, 1]);
        assert!((run.inertia - 2.5).abs() < 1e-12);
        assert!(run.history.windows(2).all(|w| w[1] <= w[0] + 1e-9));
    }

    #[test]
    fn deterministic_per_seed() {
        let x = four_points();
        let cfg = KMeansConfig::new(2).with_seed(11);
        assert_eq!(kmeans_fit(&x, &cfg).unwrap(), kmeans_fit(&x, &cfg).unwrap());
    }
}
