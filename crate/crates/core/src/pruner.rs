//! Distance-rank pruning.
//!
//! Simple pruning drops the samples nearest to their centroid, hard pruning
//! the farthest. Ties are fully ordered by sample index so keep-lists are
//! identical on every platform: simple removes lower indices first, hard
//! removes higher indices first.

use std::cmp::Ordering;

use rand::seq::index;

use crate::data::{removal_count, KeepList, Method, Scope};
use crate::error::{Error, Result};
use crate::kmeans::KMeansModel;
use crate::rng;

/// Per-sample distance to the assigned centroid.
#[derive(Debug, Clone, PartialEq)]
pub struct DistanceScores {
    distance: Vec<f64>,
    cluster: Vec<u32>,
}

impl DistanceScores {
    pub fn new(distance: Vec<f64>, cluster: Vec<u32>) -> Result<Self> {
        if distance.len() != cluster.len() {
            return Err(Error::Contract(format!(
                "{} distances but {} cluster ids",
                distance.len(),
                cluster.len()
            )));
        }
        if distance.is_empty() {
            return Err(Error::Contract("no scores".into()));
        }
        if let Some(i) = distance.iter().position(|d| !d.is_finite() || *d < 0.0) {
            return Err(Error::Contract(format!(
                "distance {} at sample {i} is not a finite non-negative number",
                distance[i]
            )));
        }
        Ok(Self { distance, cluster })
    }

    /// Scores with every sample in a single cluster.
    pub fn single_cluster(distance: Vec<f64>) -> Result<Self> {
        let cluster = vec![0; distance.len()];
        Self::new(distance, cluster)
    }

    pub fn from_model(model: &KMeansModel) -> Self {
        Self {
            distance: model.distances.clone(),
            cluster: model.assignments.clone(),
        }
    }

    pub fn n_samples(&self) -> usize {
        self.distance.len()
    }

    pub fn distances(&self) -> &[f64] {
        &self.distance
    }

    pub fn clusters(&self) -> &[u32] {
        &self.cluster
    }
}

fn check_fraction(fraction: f64, n: usize) -> Result<usize> {
    if !(0.0..1.0).contains(&fraction) {
        return Err(Error::Domain(format!("pruning fraction {fraction} outside [0, 1)")));
    }
    let r = removal_count(fraction, n);
    if r >= n {
        return Err(Error::Domain(format!(
            "removing {fraction} of {n} samples leaves nothing"
        )));
    }
    Ok(r)
}

#[derive(Clone, Copy)]
enum Rank {
    NearestFirst,
    FarthestFirst,
}

impl Rank {
    fn method(self) -> Method {
        match self {
            Rank::NearestFirst => Method::Simple,
            Rank::FarthestFirst => Method::Hard,
        }
    }

    /// Removal order: first element is removed first.
    fn cmp(self, d: &[f64], a: usize, b: usize) -> Ordering {
        match self {
            Rank::NearestFirst => d[a].total_cmp(&d[b]).then(a.cmp(&b)),
            Rank::FarthestFirst => d[b].total_cmp(&d[a]).then(b.cmp(&a)),
        }
    }
}

fn prune_ranked(scores: &DistanceScores, fraction: f64, scope: Scope, rank: Rank) -> Result<KeepList> {
    let n = scores.n_samples();
    let r = check_fraction(fraction, n)?;
    let d = &scores.distance;
    let mut removed = vec![false; n];

    let groups: Vec<Vec<usize>> = match scope {
        Scope::Global => vec![(0..n).collect()],
        Scope::PerCluster => {
            let k = scores.cluster.iter().max().map_or(0, |&c| c as usize + 1);
            let mut groups = vec![Vec::new(); k];
            for (i, &c) in scores.cluster.iter().enumerate() {
                groups[c as usize].push(i);
            }
            groups
        }
    };
    for mut group in groups {
        let quota = match scope {
            Scope::Global => r,
            Scope::PerCluster => removal_count(fraction, group.len()),
        };
        group.sort_unstable_by(|&a, &b| rank.cmp(d, a, b));
        for &i in &group[..quota] {
            removed[i] = true;
        }
    }

    let keep: Vec<usize> = (0..n).filter(|&i| !removed[i]).collect();
    if keep.is_empty() {
        return Err(Error::Domain(format!(
            "removing {fraction} of every cluster leaves nothing"
        )));
    }
    KeepList::new_scoped(keep, n, rank.method(), fraction, 0, Some(scope))
}

/// Removes the `fraction` of samples closest to their centroid.
pub fn prune_simple(scores: &DistanceScores, fraction: f64, scope: Scope) -> Result<KeepList> {
    prune_ranked(scores, fraction, scope, Rank::NearestFirst)
}

/// Removes the `fraction` of samples farthest from their centroid.
pub fn prune_hard(scores: &DistanceScores, fraction: f64, scope: Scope) -> Result<KeepList> {
    prune_ranked(scores, fraction, scope, Rank::FarthestFirst)
}

/// Uniformly random pruning of `fraction` of `n` samples.
pub fn prune_random(n: usize, fraction: f64, seed: u64) -> Result<KeepList> {
    if n == 0 {
        return Err(Error::Contract("cannot prune an empty dataset".into()));
    }
    let r = check_fraction(fraction, n)?;
    let mut rng = rng::seeded(seed);
    let mut keep = index::sample(&mut rng, n, n - r).into_vec();
    keep.sort_unstable();
    KeepList::new(keep, n, Method::Random, fraction, seed)
}

/// Uniform subset of `target_n` of the kept samples, preserving the parent's
/// provenance fields.
pub fn subsample(kl: &KeepList, target_n: usize, seed: u64) -> Result<KeepList> {
    if target_n == 0 || target_n > kl.len() {
        return Err(Error::Domain(format!(
            "cannot subsample {target_n} of {} kept samples",
            kl.len()
        )));
    }
    let mut rng = rng::seeded(seed);
    let mut picks = index::sample(&mut rng, kl.len(), target_n).into_vec();
    picks.sort_unstable();
    let indices = picks.into_iter().map(|p| kl.indices()[p]).collect();
    Ok(kl.derive_subset(indices, Method::Subsample, seed))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scores(d: &[f64]) -> DistanceScores {
        DistanceScores::single_cluster(d.to_vec()).unwrap()
    }

    #[test]
    fn simple_removes_nearest() {
        let kl = prune_simple(&scores(&[0.1, 0.5, 0.9, 0.2]), 0.5, Scope::Global).unwrap();
        assert_eq!(kl.indices(), &[1, 2]);
        assert_eq!(kl.method(), Method::Simple);
        assert_eq!(kl.scope(), Some(Scope::Global));
    }

    #[test]
    fn zero_fraction_is_identity() {
        let s = scores(&[0.1, 0.5, 0.9, 0.2]);
        assert_eq!(prune_simple(&s, 0.0, Scope::Global).unwrap().indices(), &[0, 1, 2, 3]);
        assert_eq!(prune_hard(&s, 0.0, Scope::PerCluster).unwrap().indices(), &[0, 1, 2, 3]);
    }

    #[test]
    fn per_cluster_quota() {
        let s = DistanceScores::new(vec![0.1, 0.2, 0.3, 0.05], vec![0, 0, 0, 1]).unwrap();
        let kl = prune_simple(&s, 1.0 / 3.0, Scope::PerCluster).unwrap();
        assert_eq!(kl.indices(), &[1, 2, 3]);
    }

    #[test]
    fn hard_removes_farthest() {
        let kl = prune_hard(&scores(&[0.1, 0.5, 0.9, 0.2]), 0.25, Scope::Global).unwrap();
        assert_eq!(kl.indices(), &[0, 1, 3]);
    }

    #[test]
    fn simple_and_hard_partition_distinct_scores() {
        let s = scores(&[0.1, 0.5, 0.9, 0.2]);
        let a = prune_simple(&s, 0.5, Scope::Global).unwrap();
        let b = prune_hard(&s, 0.5, Scope::Global).unwrap();
        let mut all: Vec<usize> = a.indices().iter().chain(b.indices()).copied().collect();
        all.sort();
        assert_eq!(all, vec![0, 1, 2, 3]);
    }

    #[test]
    fn equal_scores_follow_tie_rule() {
        let s = scores(&[1.0; 4]);
        assert_eq!(prune_hard(&s, 0.5, Scope::Global).unwrap().indices(), &[0, 1]);
        assert_eq!(prune_simple(&s, 0.5, Scope::Global).unwrap().indices(), &[2, 3]);
    }

    #[test]
    fn fraction_domain() {
        let s = scores(&[0.1, 0.2]);
        assert!(matches!(prune_simple(&s, 1.0, Scope::Global), Err(Error::Domain(_))));
        assert!(prune_simple(&s, -0.1, Scope::Global).is_err());
        assert!(prune_simple(&s, f64::NAN, Scope::Global).is_err());
        // round(0.75 * 2) = 2 removes everything
        assert!(prune_hard(&s, 0.75, Scope::Global).is_err());
        assert!(prune_random(4, 1.0, 0).is_err());
    }

    #[test]
    fn random_pruning() {
        assert_eq!(prune_random(4, 0.0, 9).unwrap().indices(), &[0, 1, 2, 3]);
        let a = prune_random(100, 0.3, 5).unwrap();
        assert_eq!(a, prune_random(100, 0.3, 5).unwrap());
        assert_eq!(a.len(), 70);
        assert_ne!(a.indices(), prune_random(100, 0.3, 6).unwrap().indices());
    }

    #[test]
    fn subsample_contracts() {
        let parent = prune_random(50, 0.2, 1).unwrap().with_parent_digest("feed");
        let same = subsample(&parent, parent.len(), 3).unwrap();
        assert_eq!(same.indices(), parent.indices());
        assert_eq!(same.method(), Method::Subsample);
        assert_eq!(same.parent_digest(), Some("feed"));
        assert_eq!(same.fraction_removed(), 0.2);

        let one = subsample(&parent, 1, 3).unwrap();
        assert!(parent.indices().contains(&one.indices()[0]));

        let a = subsample(&parent, 20, 4).unwrap();
        let b = subsample(&a, 7, 5).unwrap();
        assert_eq!(b.len(), 7);
        assert!(b.indices().iter().all(|i| a.indices().contains(i)));

        assert!(subsample(&parent, 0, 1).is_err());
        assert!(subsample(&parent, 41, 1).is_err());
    }

    #[test]
    fn scores_validation() {
        assert!(DistanceScores::new(vec![0.1], vec![0, 1]).is_err());
        assert!(DistanceScores::single_cluster(vec![-1.0]).is_err());
        assert!(DistanceScores::single_cluster(vec![f64::INFINITY]).is_err());
    }
}
