//! Independent oracles shared by the integration tests.
#![allow(dead_code)]

use kprune::probe::{self, ProbeModel};
use kprune::{EmbeddingMatrix, LabelVector};
use nalgebra::{DMatrix, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn gaussian_matrix(n: usize, d: usize, seed: u64) -> EmbeddingMatrix {
    let mut r = rng(seed);
    let v: Vec<f32> = (0..n * d)
        .map(|_| StandardNormal.sample(&mut r))
        .map(|x: f64| x as f32)
        .collect();
    EmbeddingMatrix::new(n, d, v).unwrap()
}

pub fn uniform_points(n: usize, d: usize, r: &mut ChaCha8Rng) -> EmbeddingMatrix {
    let v: Vec<f32> = (0..n * d).map(|_| r.random_range(-10.0f32..10.0)).collect();
    EmbeddingMatrix::new(n, d, v).unwrap()
}

/// Sum of squared distances of each group to its own mean.
pub fn sse(points: &[Vec<f64>]) -> f64 {
    if points.is_empty() {
        return 0.0;
    }
    let d = points[0].len();
    let mut mean = vec![0.0; d];
    for p in points {
        for (m, v) in mean.iter_mut().zip(p) {
            *m += v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= points.len() as f64);
    points
        .iter()
        .map(|p| p.iter().zip(&mean).map(|(a, b)| (a - b) * (a - b)).sum::<f64>())
        .sum()
}

/// Optimal 2-means objective by enumerating every 2-partition.
pub fn exhaustive_two_means(x: &EmbeddingMatrix) -> f64 {
    let n = x.n_samples();
    assert!((2..=20).contains(&n));
    let rows: Vec<Vec<f64>> = x.rows().map(|r| r.iter().map(|&v| f64::from(v)).collect()).collect();
    let mut best = f64::INFINITY;
    // Sample 0 is always in group A; every other mask is a distinct partition.
    for mask in 0u32..(1 << (n - 1)) {
        let (mut a, mut b) = (vec![rows[0].clone()], Vec::new());
        for (i, row) in rows.iter().enumerate().skip(1) {
            if mask & (1 << (i - 1)) != 0 {
                b.push(row.clone());
            } else {
                a.push(row.clone());
            }
        }
        if b.is_empty() {
            continue;
        }
        best = best.min(sse(&a) + sse(&b));
    }
    best
}

/// Normalized entropy straight from the definition, natural log.
pub fn balance_oracle(labels: &LabelVector, kept: &[usize]) -> f64 {
    let c = labels.n_classes() as usize;
    let mut counts = vec![0usize; c];
    for &i in kept {
        counts[labels.class_ids()[i] as usize] += 1;
    }
    let total = kept.len() as f64;
    let h: f64 = counts
        .iter()
        .filter(|&&k| k > 0)
        .map(|&k| {
            let p = k as f64 / total;
            -p * p.ln()
        })
        .sum();
    h / (c as f64).ln()
}

/// Dense symmetric eigen-decomposition: eigenvalues descending with unit
/// eigenvectors as columns.
pub fn dense_eigen(matrix: &[f64], n: usize) -> (Vec<f64>, DMatrix<f64>) {
    let m = DMatrix::from_row_slice(n, n, matrix);
    let eig = SymmetricEigen::new(m);
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| eig.eigenvalues[j].total_cmp(&eig.eigenvalues[i]));
    let values = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let vectors = DMatrix::from_columns(&order.iter().map(|&i| eig.eigenvectors.column(i).into_owned()).collect::<Vec<_>>());
    (values, vectors)
}

/// Sample covariance computed column by column in `f64`.
pub fn naive_covariance(x: &EmbeddingMatrix) -> Vec<f64> {
    let (n, d) = (x.n_samples(), x.n_dims());
    let v = x.to_f64();
    let mean: Vec<f64> = (0..d).map(|j| (0..n).map(|i| v[i * d + j]).sum::<f64>() / n as f64).collect();
    let mut cov = vec![0.0; d * d];
    for a in 0..d {
        for b in 0..d {
            cov[a * d + b] = (0..n)
                .map(|i| (v[i * d + a] - mean[a]) * (v[i * d + b] - mean[b]))
                .sum::<f64>()
                / (n - 1) as f64;
        }
    }
    cov
}

/// Central finite-difference gradient of the probe objective.
pub fn numeric_gradient(model: &ProbeModel, x: &[f64], y: &[u32], l2: f64, h: f64) -> (Vec<f64>, Vec<f64>) {
    let f = |m: &ProbeModel| probe::objective(m, x, y, l2);
    let mut gw = Vec::with_capacity(model.weights.len());
    for i in 0..model.weights.len() {
        let (mut up, mut down) = (model.clone(), model.clone());
        up.weights[i] += h;
        down.weights[i] -= h;
        gw.push((f(&up) - f(&down)) / (2.0 * h));
    }
    let mut gb = Vec::with_capacity(model.bias.len());
    for i in 0..model.bias.len() {
        let (mut up, mut down) = (model.clone(), model.clone());
        up.bias[i] += h;
        down.bias[i] -= h;
        gb.push((f(&up) - f(&down)) / (2.0 * h));
    }
    (gw, gb)
}

pub fn max_relative_error(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs() / x.abs().max(y.abs()).max(1e-8))
        .fold(0.0, f64::max)
}

/// `points` log-spaced sizes with `loss = a · N^(−nu)` times log-normal noise.
pub fn power_law_curve(a: f64, nu: f64, points: usize, noise: f64, seed: u64) -> Vec<(f64, f64)> {
    let mut r = rng(seed);
    (0..points)
        .map(|i| {
            let n = 10f64.powf(2.0 + 3.0 * i as f64 / (points - 1) as f64);
            let eps: f64 = StandardNormal.sample(&mut r);
            (n, a * n.powf(-nu) * (noise * eps).exp())
        })
        .collect()
}

pub struct Check {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

impl Check {
    pub fn new(name: &'static str, passed: bool, detail: impl Into<String>) -> Self {
        Self {
            name,
            passed,
            detail: detail.into(),
        }
    }
}

/// Checks every pruning contract on one score vector. `r` samples are
/// removed (`fraction = r / n`); `clusters` drives the per-cluster checks.
pub fn check_pruning_contracts(d: &[f64], clusters: &[u32], r: usize, seed: u64) -> Result<(), String> {
    use kprune::data::removal_count;
    use kprune::pruner::{self, DistanceScores};
    use kprune::Scope;

    let n = d.len();
    let f = r as f64 / n as f64;
    let global = DistanceScores::single_cluster(d.to_vec()).map_err(|e| e.to_string())?;
    let simple = pruner::prune_simple(&global, f, Scope::Global).map_err(|e| e.to_string())?;
    let hard = pruner::prune_hard(&global, f, Scope::Global).map_err(|e| e.to_string())?;
    let random = pruner::prune_random(n, f, seed).map_err(|e| e.to_string())?;

    let expect = n - removal_count(f, n);
    for (name, kl) in [("simple", &simple), ("hard", &hard), ("random", &random)] {
        if kl.len() != expect {
            return Err(format!("{name}: kept {} of {n}, expected {expect}", kl.len()));
        }
        if kl.indices().windows(2).any(|w| w[0] >= w[1]) || kl.indices().iter().any(|&i| i >= n) {
            return Err(format!("{name}: indices not strictly increasing within range"));
        }
    }

    let split = |kl: &kprune::KeepList| {
        let mut kept = vec![false; n];
        kl.indices().iter().for_each(|&i| kept[i] = true);
        let (k, rm): (Vec<usize>, Vec<usize>) = (0..n).partition(|&i| kept[i]);
        (k, rm)
    };
    let min_of = |ix: &[usize]| ix.iter().map(|&i| d[i]).fold(f64::INFINITY, f64::min);
    let max_of = |ix: &[usize]| ix.iter().map(|&i| d[i]).fold(f64::NEG_INFINITY, f64::max);
    let (sk, sr) = split(&simple);
    if min_of(&sk) < max_of(&sr) {
        return Err("simple: a kept sample is nearer than a removed one".into());
    }
    let (hk, hr) = split(&hard);
    if max_of(&hk) > min_of(&hr) {
        return Err("hard: a kept sample is farther than a removed one".into());
    }

    let distinct = {
        let mut s = d.to_vec();
        s.sort_by(f64::total_cmp);
        s.windows(2).all(|w| w[0] < w[1])
    };
    if distinct && r > 0 {
        let mirror = pruner::prune_hard(&global, (n - r) as f64 / n as f64, Scope::Global).map_err(|e| e.to_string())?;
        if mirror.indices() != sr.as_slice() {
            return Err("complementarity: simple's removed set differs from the mirrored hard keep-set".into());
        }
    }

    let one = DistanceScores::new(d.to_vec(), vec![0; n]).map_err(|e| e.to_string())?;
    for (name, pc, g) in [
        ("simple", pruner::prune_simple(&one, f, Scope::PerCluster), &simple),
        ("hard", pruner::prune_hard(&one, f, Scope::PerCluster), &hard),
    ] {
        let pc = pc.map_err(|e| e.to_string())?;
        if pc.indices() != g.indices() {
            return Err(format!("{name}: per-cluster with one cluster differs from global"));
        }
    }

    let clustered = DistanceScores::new(d.to_vec(), clusters.to_vec()).map_err(|e| e.to_string())?;
    let k = clusters.iter().max().map_or(0, |&c| c as usize + 1);
    let sizes: Vec<usize> = (0..k).map(|c| clusters.iter().filter(|&&x| x == c as u32).count()).collect();
    let survivors: usize = sizes.iter().map(|&s| s - removal_count(f, s)).sum();
    for (name, result) in [
        ("simple", pruner::prune_simple(&clustered, f, Scope::PerCluster)),
        ("hard", pruner::prune_hard(&clustered, f, Scope::PerCluster)),
    ] {
        match result {
            Err(_) if survivors == 0 => {}
            Err(e) => return Err(format!("per-cluster {name}: {e}")),
            Ok(_) if survivors == 0 => return Err(format!("per-cluster {name}: accepted an empty result")),
            Ok(pc) => {
                for (c, &size) in sizes.iter().enumerate() {
                    let kept = pc.indices().iter().filter(|&&i| clusters[i] == c as u32).count();
                    if kept != size - removal_count(f, size) {
                        return Err(format!("per-cluster {name}: cluster {c} kept {kept} of {size}"));
                    }
                }
            }
        }
    }

    let again = pruner::prune_random(n, f, seed).map_err(|e| e.to_string())?;
    let simple_again = pruner::prune_simple(&global, f, Scope::Global).map_err(|e| e.to_string())?;
    if again != random || simple_again != simple {
        return Err("pruning is not deterministic for a fixed seed".into());
    }
    Ok(())
}
