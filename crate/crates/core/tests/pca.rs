mod common;

use common::{dense_eigen, gaussian_matrix, naive_covariance, rng};
use kprune::pca::{self, PcaModel};
use kprune::EmbeddingMatrix;
use rand_distr::{Distribution, StandardNormal};

/// Rows `z · B` with `z ∈ R^3`, `B` a random `3 × d` basis, plus tiny noise.
fn rank_three(n: usize, d: usize, noise: f64, seed: u64) -> EmbeddingMatrix {
    let mut r = rng(seed);
    let basis: Vec<f64> = (0..3 * d).map(|_| StandardNormal.sample(&mut r)).collect();
    let mut v = Vec::with_capacity(n * d);
    for _ in 0..n {
        let z: Vec<f64> = (0..3)
            .map(|k| {
                let g: f64 = StandardNormal.sample(&mut r);
                3.0 * (k + 1) as f64 * g
            })
            .collect();
        for j in 0..d {
            let e: f64 = StandardNormal.sample(&mut r);
            v.push(z[0] * basis[j] + z[1] * basis[d + j] + z[2] * basis[2 * d + j] + noise * e);
        }
    }
    EmbeddingMatrix::from_f64(n, d, &v).unwrap()
}

fn full(x: &EmbeddingMatrix) -> PcaModel {
    pca::fit_pca(x, x.n_dims().min(x.n_samples() - 1)).unwrap()
}

#[test]
fn rank_three_data_is_captured_by_three_components() {
    let x = rank_three(400, 32, 1e-3, 1);
    let model = pca::fit_pca(&x, 3).unwrap();
    let explained: f64 = model.explained_variance_ratio().iter().sum();
    assert!(explained >= 0.999, "explained {explained}");
}

#[test]
fn eigenpairs_match_dense_solver() {
    for (seed, d) in [(2u64, 8usize), (3, 33), (4, 64)] {
        let x = gaussian_matrix(3 * d, d, seed);
        let model = full(&x);
        let cov = naive_covariance(&x);
        let (values, vectors) = dense_eigen(&cov, d);
        let scale = values[0];
        for (i, (&ours, &theirs)) in model.eigenvalues().iter().zip(&values).enumerate() {
            assert!((ours - theirs).abs() <= 1e-9 * scale, "d={d} eigenvalue {i}: {ours} vs {theirs}");
        }
        for i in 0..d {
            let v = model.component(i);
            let dot: f64 = v.iter().zip(vectors.column(i).iter()).map(|(a, b)| a * b).sum();
            assert!((dot.abs() - 1.0).abs() < 1e-6, "d={d} vector {i}: |dot| {dot}");
            let residual: f64 = (0..d)
                .map(|r| {
                    let cv: f64 = (0..d).map(|c| cov[r * d + c] * v[c]).sum();
                    (cv - model.eigenvalues()[i] * v[r]).powi(2)
                })
                .sum::<f64>()
                .sqrt();
            assert!(residual <= 1e-6, "d={d} residual {residual}");
        }
    }
}

#[test]
fn isotropic_data_needs_about_half_the_dimensions_for_half_the_variance() {
    let x = gaussian_matrix(20_000, 16, 5);
    let m = pca::components_for_variance(&full(&x), 0.5).unwrap();
    assert!((7..=9).contains(&m), "m = {m}");
}

#[test]
fn full_rank_transform_preserves_distances() {
    let x = gaussian_matrix(60, 12, 6);
    let model = full(&x);
    let z = pca::transform_f64(&model, &x).unwrap();
    let v = x.to_f64();
    let d = 12;
    for i in 0..60 {
        for j in (i + 1)..60 {
            let orig: f64 = (0..d).map(|k| (v[i * d + k] - v[j * d + k]).powi(2)).sum::<f64>().sqrt();
            let proj: f64 = (0..d).map(|k| (z[i * d + k] - z[j * d + k]).powi(2)).sum::<f64>().sqrt();
            assert!((orig - proj).abs() <= 1e-6 * orig, "pair ({i},{j}): {orig} vs {proj}");
        }
    }
}

#[test]
fn full_rank_reconstruction_round_trips() {
    let x = gaussian_matrix(50, 10, 7);
    let model = full(&x);
    let back = pca::reconstruct(&model, &pca::transform_f64(&model, &x).unwrap()).unwrap();
    for (a, b) in x.to_f64().iter().zip(&back) {
        assert!((a - b).abs() <= 1e-4, "{a} vs {b}");
    }
}

#[test]
fn row_permutation_does_not_change_the_model() {
    let x = gaussian_matrix(80, 6, 8);
    let mut rows: Vec<&[f32]> = x.rows().collect();
    rows.reverse();
    let y = EmbeddingMatrix::from_rows(&rows).unwrap();
    let (a, b) = (full(&x), full(&y));
    for i in 0..6 {
        assert!((a.eigenvalues()[i] - b.eigenvalues()[i]).abs() < 1e-10);
        for (p, q) in a.component(i).iter().zip(b.component(i)) {
            assert!((p - q).abs() < 1e-6);
        }
    }
}

#[test]
fn results_do_not_depend_on_thread_count() {
    let x = gaussian_matrix(300, 40, 9);
    let fit = |threads| {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .unwrap()
            .install(|| full(&x))
    };
    assert_eq!(fit(1), fit(4));
}
