//! Labeled Gaussian mixtures for desk-scale runs.
//!
//! Class means are drawn uniformly on the sphere of radius `radius`; each
//! sample is its class mean plus isotropic noise with standard deviation
//! `sigma`. Rows are interleaved by class (`row i` belongs to class
//! `i mod n_classes`).

use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::data::{EmbeddingMatrix, LabelVector};
use crate::error::{Error, Result};
use crate::rng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub n_classes: usize,
    pub n_dims: usize,
    pub per_class: usize,
    pub radius: f64,
    pub sigma: f64,
    pub seed: u64,
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        if self.n_classes == 0 || self.n_dims == 0 || self.per_class == 0 {
            return Err(Error::Domain(format!(
                "classes, dims and per-class count must be positive: {self:?}"
            )));
        }
        if !(self.radius >= 0.0 && self.radius.is_finite() && self.sigma >= 0.0 && self.sigma.is_finite()) {
            return Err(Error::Domain(format!(
                "radius and sigma must be finite and non-negative: {self:?}"
            )));
        }
        if u32::try_from(self.n_classes * self.per_class).is_err() {
            return Err(Error::Domain("dataset too large for the file formats".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct Mixture {
    pub x: EmbeddingMatrix,
    pub y: LabelVector,
    /// `n_classes × n_dims`, row-major.
    pub means: Vec<f64>,
}

fn class_means(spec: &SynthSpec) -> Vec<f64> {
    let mut rng = rng::seeded(spec.seed);
    let mut means = Vec::with_capacity(spec.n_classes * spec.n_dims);
    for _ in 0..spec.n_classes {
        let v: Vec<f64> = loop {
            let v: Vec<f64> = (0..spec.n_dims).map(|_| StandardNormal.sample(&mut rng)).collect();
            if v.iter().any(|x| *x != 0.0) {
                break v;
            }
        };
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        means.extend(v.iter().map(|x| x / norm * spec.radius));
    }
    means
}

fn draw(spec: &SynthSpec, means: &[f64], per_class: usize, stream: u64) -> Result<(EmbeddingMatrix, LabelVector)> {
    let (c, d) = (spec.n_classes, spec.n_dims);
    let mut rng = rng::seeded(rng::derive(spec.seed, stream));
    let n = c * per_class;
    let mut values = Vec::with_capacity(n * d);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let class = i % c;
        for j in 0..d {
            let noise: f64 = StandardNormal.sample(&mut rng);
            values.push((means[class * d + j] + spec.sigma * noise) as f32);
        }
        labels.push(class as u32);
    }
    Ok((
        EmbeddingMatrix::new(n, d, values)?,
        LabelVector::new(labels, c as u32)?,
    ))
}

/// Generates `per_class` samples of every class.
pub fn generate(spec: &SynthSpec) -> Result<Mixture> {
    spec.validate()?;
    let means = class_means(spec);
    let (x, y) = draw(spec, &means, spec.per_class, 1)?;
    Ok(Mixture { x, y, means })
}

/// Like [`generate`], plus an independent draw of `test_per_class` samples
/// per class from the same class means.
pub fn generate_with_test(spec: &SynthSpec, test_per_class: usize) -> Result<(Mixture, Mixture)> {
    let train = generate(spec)?;
    if test_per_class == 0 {
        return Err(Error::Domain("test_per_class must be positive".into()));
    }
    let (x, y) = draw(spec, &train.means, test_per_class, 2)?;
    let test = Mixture {
        x,
        y,
        means: train.means.clone(),
    };
    Ok((train, test))
}
