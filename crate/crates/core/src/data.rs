//! Dense embedding matrices, label vectors and keep-lists.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// An `n_samples × n_dims` row-major matrix of finite `f32` embeddings.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingMatrix {
    n_samples: usize,
    n_dims: usize,
    values: Vec<f32>,
}

impl EmbeddingMatrix {
    pub fn new(n_samples: usize, n_dims: usize, values: Vec<f32>) -> Result<Self> {
        if n_samples == 0 || n_dims == 0 {
            return Err(Error::Contract(format!(
                "embedding matrix must be non-empty, got {n_samples}x{n_dims}"
            )));
        }
        if values.len() != n_samples * n_dims {
            return Err(Error::Contract(format!(
                "{n_samples}x{n_dims} matrix needs {} values, got {}",
                n_samples * n_dims,
                values.len()
            )));
        }
        if let Some(pos) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::Contract(format!(
                "non-finite value at row {}, column {}",
                pos / n_dims,
                pos % n_dims
            )));
        }
        Ok(Self {
            n_samples,
            n_dims,
            values,
        })
    }

    /// Builds a matrix from `f64` data, rounding each value to `f32`.
    pub fn from_f64(n_samples: usize, n_dims: usize, values: &[f64]) -> Result<Self> {
        Self::new(n_samples, n_dims, values.iter().map(|&v| v as f32).collect())
    }

    pub fn from_rows<R: AsRef<[f32]>>(rows: &[R]) -> Result<Self> {
        let n_dims = rows.first().map_or(0, |r| r.as_ref().len());
        if rows.iter().any(|r| r.as_ref().len() != n_dims) {
            return Err(Error::Contract("ragged rows".into()));
        }
        let values = rows.iter().flat_map(|r| r.as_ref().iter().copied()).collect();
        Self::new(rows.len(), n_dims, values)
    }

    pub fn n_samples(&self) -> usize {
        self.n_samples
    }

    pub fn n_dims(&self) -> usize {
        self.n_dims
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.values[i * self.n_dims..(i + 1) * self.n_dims]
    }

    pub fn rows(&self) -> impl ExactSizeIterator<Item = &[f32]> + '_ {
        self.values.chunks_exact(self.n_dims)
    }

    /// Widened copy of the values, row-major.
    pub fn to_f64(&self) -> Vec<f64> {
        self.values.iter().map(|&v| f64::from(v)).collect()
    }

    /// Rows at the kept indices, in order.
    pub fn gather(&self, keep: &KeepList) -> Result<Self> {
        keep.check_source(self.n_samples)?;
        let mut values = Vec::with_capacity(keep.len() * self.n_dims);
        for &i in keep.indices() {
            values.extend_from_slice(self.row(i));
        }
        Self::new(keep.len(), self.n_dims, values)
    }
}

/// Class membership of every sample.
#[derive(Debug, Clone, PartialEq)]
pub struct LabelVector {
    class_ids: Vec<u32>,
    n_classes: u32,
    class_names: Option<Vec<String>>,
}

impl LabelVector {
    /// Labels for a full dataset: every class in `0..n_classes` must occur.
    pub fn new(class_ids: Vec<u32>, n_classes: u32) -> Result<Self> {
        let labels = Self::subset(class_ids, n_classes)?;
        let mut seen = vec![false; n_classes as usize];
        for &c in &labels.class_ids {
            seen[c as usize] = true;
        }
        if let Some(missing) = seen.iter().position(|s| !s) {
            return Err(Error::Contract(format!(
                "class {missing} of {n_classes} has no samples"
            )));
        }
        Ok(labels)
    }

    /// Labels for a subset of a dataset; classes may be absent.
    pub fn subset(class_ids: Vec<u32>, n_classes: u32) -> Result<Self> {
        if class_ids.is_empty() {
            return Err(Error::Contract("label vector must be non-empty".into()));
        }
        if n_classes == 0 {
            return Err(Error::Contract("n_classes must be at least 1".into()));
        }
        if let Some(pos) = class_ids.iter().position(|&c| c >= n_classes) {
            return Err(Error::Contract(format!(
                "label {} at sample {pos} is not below n_classes={n_classes}",
                class_ids[pos]
            )));
        }
        Ok(Self {
            class_ids,
            n_classes,
            class_names: None,
        })
    }

    pub fn with_names(mut self, names: Vec<String>) -> Result<Self> {
        if names.len() != self.n_classes as usize {
            return Err(Error::Contract(format!(
                "{} class names for {} classes",
                names.len(),
                self.n_classes
            )));
        }
        self.class_names = Some(names);
        Ok(self)
    }

    pub fn n_samples(&self) -> usize {
        self.class_ids.len()
    }

    pub fn n_classes(&self) -> u32 {
        self.n_classes
    }

    pub fn class_ids(&self) -> &[u32] {
        &self.class_ids
    }

    pub fn class_names(&self) -> Option<&[String]> {
        self.class_names.as_deref()
    }

    pub fn gather(&self, keep: &KeepList) -> Result<Self> {
        keep.check_source(self.n_samples())?;
        let ids = keep.indices().iter().map(|&i| self.class_ids[i]).collect();
        let mut out = Self::subset(ids, self.n_classes)?;
        out.class_names = self.class_names.clone();
        Ok(out)
    }
}

/// How a keep-list was produced.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Simple,
    Hard,
    Random,
    Subsample,
    Identity,
}

impl Method {
    pub fn as_str(self) -> &'static str {
        match self {
            Method::Simple => "simple",
            Method::Hard => "hard",
            Method::Random => "random",
            Method::Subsample => "subsample",
            Method::Identity => "identity",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "simple" => Ok(Method::Simple),
            "hard" => Ok(Method::Hard),
            "random" => Ok(Method::Random),
            "subsample" => Ok(Method::Subsample),
            "identity" => Ok(Method::Identity),
            other => Err(Error::Domain(format!("unknown pruning method `{other}`"))),
        }
    }
}

/// Ranking scope for distance-based pruning.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scope {
    /// Rank all samples together.
    #[default]
    Global,
    /// Rank and prune each cluster separately.
    PerCluster,
}

impl fmt::Display for Scope {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Scope::Global => "global",
            Scope::PerCluster => "per_cluster",
        })
    }
}

impl FromStr for Scope {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "global" => Ok(Scope::Global),
            "per_cluster" | "per-cluster" => Ok(Scope::PerCluster),
            other => Err(Error::Domain(format!("unknown pruning scope `{other}`"))),
        }
    }
}

/// Round half to even, applied to `fraction · n`.
pub fn removal_count(fraction: f64, n: usize) -> usize {
    (fraction * n as f64).round_ties_even() as usize
}

/// Sorted indices of the samples retained by a pruning decision.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KeepList {
    method: Method,
    source_n: usize,
    fraction_removed: f64,
    seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    scope: Option<Scope>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    parent_digest: Option<String>,
    indices: Vec<usize>,
}

impl KeepList {
    pub fn new(
        indices: Vec<usize>,
        source_n: usize,
        method: Method,
        fraction_removed: f64,
        seed: u64,
    ) -> Result<Self> {
        Self::new_scoped(indices, source_n, method, fraction_removed, seed, None)
    }

    /// Like [`KeepList::new`], recording the scope the fraction applied to.
    pub fn new_scoped(
        indices: Vec<usize>,
        source_n: usize,
        method: Method,
        fraction_removed: f64,
        seed: u64,
        scope: Option<Scope>,
    ) -> Result<Self> {
        let kl = Self {
            method,
            source_n,
            fraction_removed,
            seed,
            scope,
            parent_digest: None,
            indices,
        };
        kl.validate()?;
        Ok(kl)
    }

    /// Keeps all `n` samples.
    pub fn identity(n: usize) -> Self {
        Self {
            method: Method::Identity,
            source_n: n,
            fraction_removed: 0.0,
            seed: 0,
            scope: None,
            parent_digest: None,
            indices: (0..n).collect(),
        }
    }

    pub fn with_scope(mut self, scope: Scope) -> Result<Self> {
        self.scope = Some(scope);
        self.validate()?;
        Ok(self)
    }

    pub fn with_parent_digest(mut self, digest: impl Into<String>) -> Self {
        self.parent_digest = Some(digest.into());
        self
    }

    /// A subset of this list's indices carrying its provenance fields.
    /// `indices` must be a sorted subset of `self.indices()`.
    pub(crate) fn derive_subset(&self, indices: Vec<usize>, method: Method, seed: u64) -> Self {
        Self {
            method,
            source_n: self.source_n,
            fraction_removed: self.fraction_removed,
            seed,
            scope: self.scope,
            parent_digest: self.parent_digest.clone(),
            indices,
        }
    }

    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn source_n(&self) -> usize {
        self.source_n
    }

    pub fn method(&self) -> Method {
        self.method
    }

    pub fn fraction_removed(&self) -> f64 {
        self.fraction_removed
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn scope(&self) -> Option<Scope> {
        self.scope
    }

    pub fn parent_digest(&self) -> Option<&str> {
        self.parent_digest.as_deref()
    }

    /// Maps `inner`, which indexes this list's kept samples, back to the source.
    pub fn compose(&self, inner: &KeepList) -> Result<KeepList> {
        inner.check_source(self.len())?;
        let mut out = inner.clone();
        out.indices = inner.indices.iter().map(|&i| self.indices[i]).collect();
        out.source_n = self.source_n;
        Ok(out)
    }

    pub(crate) fn check_source(&self, n: usize) -> Result<()> {
        if self.source_n != n {
            return Err(Error::Contract(format!(
                "keep-list indexes {} samples but the dataset has {n}",
                self.source_n
            )));
        }
        if self.indices.is_empty() {
            return Err(Error::Contract("keep-list selects no samples".into()));
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.fraction_removed) {
            return Err(Error::Contract(format!(
                "fraction_removed {} outside [0, 1]",
                self.fraction_removed
            )));
        }
        if let Some(w) = self.indices.windows(2).find(|w| w[0] >= w[1]) {
            return Err(Error::Contract(format!(
                "indices not strictly increasing at {} -> {}",
                w[0], w[1]
            )));
        }
        if let Some(&last) = self.indices.last() {
            if last >= self.source_n {
                return Err(Error::Contract(format!(
                    "index {last} out of range for source_n={}",
                    self.source_n
                )));
            }
        }
        let ranked = matches!(self.method, Method::Simple | Method::Hard | Method::Random);
        if ranked && self.scope != Some(Scope::PerCluster) {
            let expected = self.source_n - removal_count(self.fraction_removed, self.source_n);
            if self.indices.len() != expected {
                return Err(Error::Contract(format!(
                    "{} keep-list removing {} of {} must keep {expected} samples, has {}",
                    self.method,
                    self.fraction_removed,
                    self.source_n,
                    self.indices.len()
                )));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn column(values: &[f32]) -> EmbeddingMatrix {
        EmbeddingMatrix::new(values.len(), 1, values.to_vec()).unwrap()
    }

    #[test]
    fn gather_selects_rows_in_order() {
        let x = column(&[1.0, 2.0, 3.0]);
        let kl = KeepList::new(vec![0, 2], 3, Method::Subsample, 0.0, 0).unwrap();
        assert_eq!(x.gather(&kl).unwrap(), column(&[1.0, 3.0]));
        assert_eq!(x.gather(&KeepList::identity(3)).unwrap(), x);
    }

    #[test]
    fn gather_rejects_empty_and_mismatched() {
        let x = column(&[1.0, 2.0, 3.0]);
        let empty = KeepList::new(vec![], 3, Method::Subsample, 0.0, 0).unwrap();
        assert!(matches!(x.gather(&empty), Err(Error::Contract(_))));
        assert!(x.gather(&KeepList::identity(4)).is_err());
    }

    #[test]
    fn compose_matches_nested_gather() {
        let x = column(&[10.0, 11.0, 12.0, 13.0, 14.0]);
        let outer = KeepList::new(vec![0, 2, 3, 4], 5, Method::Subsample, 0.0, 0).unwrap();
        let inner = KeepList::new(vec![1, 3], 4, Method::Subsample, 0.0, 0).unwrap();
        let nested = x.gather(&outer).unwrap().gather(&inner).unwrap();
        assert_eq!(nested, x.gather(&outer.compose(&inner).unwrap()).unwrap());
    }

    #[test]
    fn rejects_non_finite_values() {
        assert!(EmbeddingMatrix::new(1, 2, vec![0.0, f32::NAN]).is_err());
        assert!(EmbeddingMatrix::new(1, 1, vec![f32::INFINITY]).is_err());
        assert!(EmbeddingMatrix::new(0, 1, vec![]).is_err());
    }

    #[test]
    fn label_invariants() {
        assert!(LabelVector::new(vec![0, 1, 0], 2).is_ok());
        assert!(LabelVector::new(vec![5], 3).is_err());
        assert!(LabelVector::new(vec![], 3).is_err());
        // class 2 never occurs
        assert!(LabelVector::new(vec![0, 1], 3).is_err());
        assert!(LabelVector::subset(vec![0, 1], 3).is_ok());
    }

    #[test]
    fn keeplist_sortedness_and_range() {
        assert!(KeepList::new(vec![3, 1], 4, Method::Subsample, 0.0, 0).is_err());
        assert!(KeepList::new(vec![1, 1], 4, Method::Subsample, 0.0, 0).is_err());
        assert!(KeepList::new(vec![4], 4, Method::Subsample, 0.0, 0).is_err());
        assert_eq!(KeepList::identity(4).indices(), &[0, 1, 2, 3]);
    }

    #[test]
    fn keeplist_cardinality_for_ranked_methods() {
        assert!(KeepList::new(vec![1, 3], 4, Method::Simple, 0.5, 7).is_ok());
        assert!(KeepList::new(vec![1], 4, Method::Simple, 0.5, 7).is_err());
        // round(0.5 * 3) = 2 under half-to-even, so one sample survives
        assert!(KeepList::new(vec![0], 3, Method::Hard, 0.5, 0).is_ok());
    }

    #[test]
    fn removal_count_rounds_half_to_even() {
        assert_eq!(removal_count(0.5, 3), 2);
        assert_eq!(removal_count(0.5, 5), 2);
        assert_eq!(removal_count(0.25, 10), 2);
        assert_eq!(removal_count(0.4, 20_000), 8_000);
    }
}
