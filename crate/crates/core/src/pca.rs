//! Principal component analysis via an explicit covariance matrix and
//! cyclic Jacobi rotations.

use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::EmbeddingMatrix;
use crate::error::{Error, Result};
use crate::io::{read_embeddings, write_embeddings};

const MAX_SWEEPS: usize = 64;
const OFF_DIAGONAL_TOL: f64 = 1e-10;
const CLAMP_REL: f64 = 1e-12;
/// Covariance rows handled per parallel task.
const ROW_TILE: usize = 16;

#[derive(Debug, Clone, PartialEq)]
pub struct PcaModel {
    mean: Vec<f64>,
    /// `n_components × n_dims`, row-major; rows orthonormal.
    components: Vec<f64>,
    eigenvalues: Vec<f64>,
    total_variance: f64,
    n_fit_samples: usize,
}

impl PcaModel {
    pub fn n_dims(&self) -> usize {
        self.mean.len()
    }

    pub fn n_components(&self) -> usize {
        self.eigenvalues.len()
    }

    pub fn mean(&self) -> &[f64] {
        &self.mean
    }

    pub fn component(&self, i: usize) -> &[f64] {
        let d = self.n_dims();
        &self.components[i * d..(i + 1) * d]
    }

    pub fn eigenvalues(&self) -> &[f64] {
        &self.eigenvalues
    }

    pub fn total_variance(&self) -> f64 {
        self.total_variance
    }

    /// True when every available component was kept.
    pub fn is_full(&self) -> bool {
        self.n_components() == max_components(self.n_fit_samples, self.n_dims())
    }

    pub fn explained_variance_ratio(&self) -> Vec<f64> {
        self.eigenvalues
            .iter()
            .map(|&l| (l / self.total_variance).clamp(0.0, 1.0))
            .collect()
    }

    pub fn cumulative_variance_ratio(&self) -> Vec<f64> {
        self.explained_variance_ratio()
            .iter()
            .scan(0.0, |acc, r| {
                *acc += r;
                Some(*acc)
            })
            .collect()
    }

    /// The model restricted to its first `m` components.
    pub fn truncate(&self, m: usize) -> Result<PcaModel> {
        if m == 0 || m > self.n_components() {
            return Err(Error::Domain(format!(
                "cannot keep {m} of {} components",
                self.n_components()
            )));
        }
        Ok(PcaModel {
            mean: self.mean.clone(),
            components: self.components[..m * self.n_dims()].to_vec(),
            eigenvalues: self.eigenvalues[..m].to_vec(),
            total_variance: self.total_variance,
            n_fit_samples: self.n_fit_samples,
        })
    }
}

fn max_components(n_samples: usize, n_dims: usize) -> usize {
    n_samples.saturating_sub(1).min(n_dims)
}

/// Column means, accumulated in `f64` in row order.
pub(crate) fn column_means(x: &EmbeddingMatrix) -> Vec<f64> {
    let mut mean = vec![0.0; x.n_dims()];
    for row in x.rows() {
        for (m, &v) in mean.iter_mut().zip(row) {
            *m += f64::from(v);
        }
    }
    let n = x.n_samples() as f64;
    mean.iter_mut().for_each(|m| *m /= n);
    mean
}

/// Sample covariance (divisor `N − 1`), dense `D × D`.
///
/// Each entry is a sequential sum over samples in index order, so the result
/// does not depend on how tiles are scheduled across threads.
pub fn covariance(x: &EmbeddingMatrix, mean: &[f64]) -> Vec<f64> {
    let d = x.n_dims();
    let centered: Vec<f64> = x
        .rows()
        .flat_map(|row| row.iter().zip(mean).map(|(&v, m)| f64::from(v) - m))
        .collect();
    let denom = (x.n_samples() - 1) as f64;

    let tiles: Vec<(usize, Vec<f64>)> = (0..d)
        .step_by(ROW_TILE)
        .collect::<Vec<_>>()
        .into_par_iter()
        .map(|start| {
            let end = (start + ROW_TILE).min(d);
            let mut acc = vec![0.0; (end - start) * d];
            for row in centered.chunks_exact(d) {
                for i in start..end {
                    let ci = row[i];
                    let out = &mut acc[(i - start) * d..(i - start + 1) * d];
                    for j in i..d {
                        out[j] += ci * row[j];
                    }
                }
            }
            (start, acc)
        })
        .collect();

    let mut cov = vec![0.0; d * d];
    for (start, acc) in tiles {
        for (r, chunk) in acc.chunks_exact(d).enumerate() {
            let i = start + r;
            for j in i..d {
                let v = chunk[j] / denom;
                cov[i * d + j] = v;
                cov[j * d + i] = v;
            }
        }
    }
    cov
}

/// Eigen-decomposition of a symmetric `n × n` matrix by cyclic Jacobi.
///
/// Returns eigenvalues in descending order and the matching unit
/// eigenvectors as rows, each sign-fixed so that its largest-magnitude
/// coordinate is positive (ties to the lowest index).
pub fn symmetric_eigen(matrix: &[f64], n: usize) -> (Vec<f64>, Vec<f64>) {
    assert_eq!(matrix.len(), n * n, "matrix must be n x n");
    let mut a = matrix.to_vec();
    let mut v = vec![0.0; n * n];
    for i in 0..n {
        v[i * n + i] = 1.0;
    }
    let frob = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let threshold = OFF_DIAGONAL_TOL * frob;

    for _ in 0..MAX_SWEEPS {
        let max_off = (0..n)
            .flat_map(|p| (p + 1..n).map(move |q| (p, q)))
            .map(|(p, q)| a[p * n + q].abs())
            .fold(0.0, f64::max);
        if max_off < threshold || max_off == 0.0 {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                let apq = a[p * n + q];
                if apq == 0.0 {
                    continue;
                }
                let theta = (a[q * n + q] - a[p * n + p]) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                // A <- A J
                for k in 0..n {
                    let (akp, akq) = (a[k * n + p], a[k * n + q]);
                    a[k * n + p] = c * akp - s * akq;
                    a[k * n + q] = s * akp + c * akq;
                }
                // A <- J^T A
                for k in 0..n {
                    let (apk, aqk) = (a[p * n + k], a[q * n + k]);
                    a[p * n + k] = c * apk - s * aqk;
                    a[q * n + k] = s * apk + c * aqk;
                }
                a[p * n + q] = 0.0;
                a[q * n + p] = 0.0;
                for k in 0..n {
                    let (vkp, vkq) = (v[k * n + p], v[k * n + q]);
                    v[k * n + p] = c * vkp - s * vkq;
                    v[k * n + q] = s * vkp + c * vkq;
                }
            }
        }
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| a[j * n + j].total_cmp(&a[i * n + i]).then(i.cmp(&j)));
    let values = order.iter().map(|&i| a[i * n + i]).collect();
    let mut vectors = Vec::with_capacity(n * n);
    for &col in &order {
        let mut vec: Vec<f64> = (0..n).map(|k| v[k * n + col]).collect();
        fix_sign(&mut vec);
        vectors.extend(vec);
    }
    (values, vectors)
}

fn fix_sign(v: &mut [f64]) {
    let mut best = 0;
    for (i, x) in v.iter().enumerate() {
        if x.abs() > v[best].abs() {
            best = i;
        }
    }
    if v[best] < 0.0 {
        v.iter_mut().for_each(|x| *x = -*x);
    }
}

/// Fits the top `n_components` principal components of `x`.
pub fn fit_pca(x: &EmbeddingMatrix, n_components: usize) -> Result<PcaModel> {
    let (n, d) = (x.n_samples(), x.n_dims());
    if n < 2 {
        return Err(Error::Contract(format!("PCA needs at least 2 samples, got {n}")));
    }
    let limit = max_components(n, d);
    if n_components == 0 || n_components > limit {
        return Err(Error::Domain(format!(
            "n_components must be in [1, {limit}] for {n} samples in {d} dimensions, got {n_components}"
        )));
    }
    let mean = column_means(x);
    let cov = covariance(x, &mean);
    let total_variance: f64 = (0..d).map(|i| cov[i * d + i]).sum();
    if total_variance <= 0.0 {
        return Err(Error::Degenerate("all rows are identical (zero variance)".into()));
    }
    let (values, vectors) = symmetric_eigen(&cov, d);
    let eigenvalues = values[..n_components]
        .iter()
        .map(|&l| if l < CLAMP_REL * total_variance { 0.0 } else { l })
        .collect();
    Ok(PcaModel {
        mean,
        components: vectors[..n_components * d].to_vec(),
        eigenvalues,
        total_variance,
        n_fit_samples: n,
    })
}

/// Projection onto the components, in `f64`, row-major `N × m`.
pub fn transform_f64(model: &PcaModel, x: &EmbeddingMatrix) -> Result<Vec<f64>> {
    let d = model.n_dims();
    if x.n_dims() != d {
        return Err(Error::Contract(format!(
            "PCA model has {d} dimensions, input has {}",
            x.n_dims()
        )));
    }
    let m = model.n_components();
    let out = x
        .values()
        .par_chunks_exact(d)
        .flat_map_iter(|row| {
            let centered: Vec<f64> = row.iter().zip(&model.mean).map(|(&v, mu)| f64::from(v) - mu).collect();
            (0..m).map(move |c| {
                model
                    .component(c)
                    .iter()
                    .zip(&centered)
                    .map(|(a, b)| a * b)
                    .sum::<f64>()
            })
        })
        .collect();
    Ok(out)
}

pub fn transform(model: &PcaModel, x: &EmbeddingMatrix) -> Result<EmbeddingMatrix> {
    let projected = transform_f64(model, x)?;
    EmbeddingMatrix::from_f64(x.n_samples(), model.n_components(), &projected)
}

/// Maps projected rows back into the input space.
pub fn reconstruct(model: &PcaModel, projected: &[f64]) -> Result<Vec<f64>> {
    let (m, d) = (model.n_components(), model.n_dims());
    if !projected.len().is_multiple_of(m) {
        return Err(Error::Contract(format!(
            "projected data length {} is not a multiple of {m}",
            projected.len()
        )));
    }
    let mut out = Vec::with_capacity(projected.len() / m * d);
    for row in projected.chunks_exact(m) {
        let mut x = model.mean.clone();
        for (c, &coef) in row.iter().enumerate() {
            for (xi, ci) in x.iter_mut().zip(model.component(c)) {
                *xi += coef * ci;
            }
        }
        out.extend(x);
    }
    Ok(out)
}

/// Smallest number of leading components whose cumulative explained
/// variance reaches `threshold`.
pub fn components_for_variance(model: &PcaModel, threshold: f64) -> Result<usize> {
    if !(threshold > 0.0 && threshold <= 1.0) {
        return Err(Error::Domain(format!("variance threshold {threshold} outside (0, 1]")));
    }
    if !model.is_full() {
        return Err(Error::Contract(format!(
            "model keeps {} of {} components; refit with all components",
            model.n_components(),
            max_components(model.n_fit_samples, model.n_dims())
        )));
    }
    let cumulative = model.cumulative_variance_ratio();
    Ok(cumulative
        .iter()
        .position(|&c| c >= threshold - 1e-12)
        .map_or(model.n_components(), |i| i + 1))
}

#[derive(Serialize, Deserialize)]
struct PcaMeta {
    n_fit_samples: usize,
    total_variance: f64,
    eigenvalues: Vec<f64>,
    explained_variance_ratio: Vec<f64>,
}

/// File paths of a saved model: `(mean, components, metadata)`.
pub fn model_paths(prefix: &Path) -> (PathBuf, PathBuf, PathBuf) {
    let with = |suffix: &str| {
        let mut s = prefix.as_os_str().to_owned();
        s.push(suffix);
        PathBuf::from(s)
    };
    (with(".mean.emb"), with(".components.emb"), with(".pca.json"))
}

/// Saves the mean and components as `EMB1` (`f32`) and the spectrum as JSON.
pub fn save_model(model: &PcaModel, prefix: impl AsRef<Path>) -> Result<()> {
    let (mean_p, comp_p, meta_p) = model_paths(prefix.as_ref());
    write_embeddings(&EmbeddingMatrix::from_f64(1, model.n_dims(), &model.mean)?, mean_p)?;
    write_embeddings(
        &EmbeddingMatrix::from_f64(model.n_components(), model.n_dims(), &model.components)?,
        comp_p,
    )?;
    let meta = PcaMeta {
        n_fit_samples: model.n_fit_samples,
        total_variance: model.total_variance,
        eigenvalues: model.eigenvalues.clone(),
        explained_variance_ratio: model.explained_variance_ratio(),
    };
    let text = serde_json::to_string_pretty(&meta).expect("plain data serializes");
    fs::write(&meta_p, text + "\n").map_err(|e| Error::io(&meta_p, e))
}

pub fn load_model(prefix: impl AsRef<Path>) -> Result<PcaModel> {
    let (mean_p, comp_p, meta_p) = model_paths(prefix.as_ref());
    let mean = read_embeddings(&mean_p)?;
    let comps = read_embeddings(&comp_p)?;
    let text = fs::read_to_string(&meta_p).map_err(|e| Error::io(&meta_p, e))?;
    let meta: PcaMeta = serde_json::from_str(&text).map_err(|e| Error::Parse {
        path: meta_p.clone(),
        message: e.to_string(),
    })?;
    if mean.n_samples() != 1 || comps.n_dims() != mean.n_dims() || comps.n_samples() != meta.eigenvalues.len() {
        return Err(Error::Parse {
            path: meta_p,
            message: "mean, components and eigenvalues disagree in shape".into(),
        });
    }
    Ok(PcaModel {
        mean: mean.to_f64(),
        components: comps.to_f64(),
        eigenvalues: meta.eigenvalues,
        total_variance: meta.total_variance,
        n_fit_samples: meta.n_fit_samples,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn matrix(rows: &[&[f32]]) -> EmbeddingMatrix {
        EmbeddingMatrix::from_rows(rows).unwrap()
    }

    #[test]
    fn variance_on_one_axis() {
        let x = matrix(&[&[1.0, 0.0], &[-1.0, 0.0], &[2.0, 0.0], &[-2.0, 0.0]]);
        let model = fit_pca(&x, 1).unwrap();
        assert_eq!(model.component(0), &[1.0, 0.0]);
        assert!((model.explained_variance_ratio()[0] - 1.0).abs() < 1e-12);
        // (1 + 1 + 4 + 4) / 3
        assert!((model.eigenvalues()[0] - 10.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn rejects_bad_component_counts_and_constant_data() {
        let x = matrix(&[&[1.0, 2.0], &[3.0, 5.0], &[0.0, 1.0]]);
        assert!(matches!(fit_pca(&x, 0), Err(Error::Domain(_))));
        assert!(matches!(fit_pca(&x, 3), Err(Error::Domain(_))));
        let one = matrix(&[&[1.0, 2.0]]);
        assert!(fit_pca(&one, 1).is_err());
        let flat = matrix(&[&[1.0, 2.0], &[1.0, 2.0], &[1.0, 2.0]]);
        assert!(matches!(fit_pca(&flat, 1), Err(Error::Degenerate(_))));
    }

    #[test]
    fn mean_row_projects_to_zero() {
        let x = matrix(&[&[1.0, 2.0, 0.0], &[3.0, 5.0, 1.0], &[0.0, 1.0, 4.0], &[2.0, 0.0, 1.0]]);
        let model = fit_pca(&x, 2).unwrap();
        let mean: Vec<f32> = model.mean().iter().map(|&m| m as f32).collect();
        let proj = transform_f64(&model, &matrix(&[&mean])).unwrap();
        assert!(proj.iter().all(|v| v.abs() < 1e-6), "{proj:?}");
    }

    #[test]
    fn components_for_variance_cumulative() {
        let model = PcaModel {
            mean: vec![0.0; 3],
            components: vec![1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0],
            eigenvalues: vec![0.6, 0.3, 0.1],
            total_variance: 1.0,
            n_fit_samples: 10,
        };
        assert_eq!(components_for_variance(&model, 0.8).unwrap(), 2);
        assert_eq!(components_for_variance(&model, 0.6).unwrap(), 1);
        assert_eq!(components_for_variance(&model, 1.0).unwrap(), 3);
        assert!(components_for_variance(&model, 0.0).is_err());
        assert!(components_for_variance(&model, 1.5).is_err());
    }

    #[test]
    fn partial_model_rejected_for_variance_query() {
        let x = matrix(&[&[1.0, 2.0, 0.0], &[3.0, 5.0, 1.0], &[0.0, 1.0, 4.0], &[2.0, 0.0, 1.0]]);
        let model = fit_pca(&x, 1).unwrap();
        assert!(matches!(components_for_variance(&model, 0.5), Err(Error::Contract(_))));
    }

    #[test]
    fn jacobi_on_known_matrix() {
        // eigenvalues 3 and 1 with eigenvectors (1,1)/√2 and (1,-1)/√2
        let (vals, vecs) = symmetric_eigen(&[2.0, 1.0, 1.0, 2.0], 2);
        assert!((vals[0] - 3.0).abs() < 1e-14 && (vals[1] - 1.0).abs() < 1e-14);
        let h = std::f64::consts::FRAC_1_SQRT_2;
        assert!((vecs[0] - h).abs() < 1e-14 && (vecs[1] - h).abs() < 1e-14);
        // tie in magnitude: lowest index carries the positive sign
        assert!(vecs[2] > 0.0 && vecs[3] < 0.0);
    }

    #[test]
    fn sign_convention() {
        let mut v = vec![0.1, -0.9, 0.3];
        fix_sign(&mut v);
        assert_eq!(v, vec![-0.1, 0.9, -0.3]);
    }

    #[test]
    fn save_and_load() {
        let dir = tempfile::tempdir().unwrap();
        let prefix = dir.path().join("pca");
        let x = matrix(&[&[1.0, 2.0, 0.0], &[3.0, 5.0, 1.0], &[0.0, 1.0, 4.0], &[2.0, 0.0, 1.0]]);
        let model = fit_pca(&x, 2).unwrap();
        save_model(&model, &prefix).unwrap();
        let back = load_model(&prefix).unwrap();
        assert_eq!(back.eigenvalues(), model.eigenvalues());
        assert_eq!(back.n_components(), 2);
        for (a, b) in back.mean().iter().zip(model.mean()) {
            assert!((a - b).abs() < 1e-6);
        }
    }
}
