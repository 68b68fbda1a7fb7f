//! Declarative experiment description (TOML).
//!
//! ```toml
//! seed = 42
//!
//! [inputs]
//! embeddings = "train.emb"
//! labels = "train.lbl"
//! test_embeddings = "test.emb"
//! test_labels = "test.lbl"
//!
//! [pca]              # optional; give exactly one of the two keys
//! variance = 0.8     # or: components = 32
//!
//! [kmeans]
//! k = 10
//!
//! [pruning]
//! scope = "global"   # or "per_cluster"
//! baseline = true    # identity keep-list: random pruning via per-N subsampling
//! random = [0.4]
//! simple = [0.1, 0.2, 0.3, 0.4]
//! hard = [0.1, 0.2, 0.3, 0.4]
//!
//! [curve]
//! log_grid = { min = 50, max = 6000, points = 6 }   # or: n_grid = [...]
//! repeats = 20
//!
//! [probe]
//! epochs = 100
//!
//! [fit]
//! window = [100, 5000]   # optional
//! ```
//!
//! Relative input paths are resolved against the manifest's directory.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::data::{Method, Scope};
use crate::error::{Error, Result};
use crate::kmeans::KMeansConfig;
use crate::probe::{self, ProbeConfig};
use crate::scaling::Window;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Inputs {
    pub embeddings: PathBuf,
    pub labels: PathBuf,
    pub test_embeddings: PathBuf,
    pub test_labels: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PcaSpec {
    pub components: Option<usize>,
    pub variance: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KMeansSpec {
    pub k: usize,
    #[serde(default = "defaults::max_iter")]
    pub max_iter: usize,
    #[serde(default = "defaults::tol")]
    pub tol: f64,
    #[serde(default = "defaults::n_init")]
    pub n_init: usize,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PruningSpec {
    #[serde(default)]
    pub scope: Scope,
    #[serde(default)]
    pub baseline: bool,
    #[serde(default)]
    pub random: Vec<f64>,
    #[serde(default)]
    pub simple: Vec<f64>,
    #[serde(default)]
    pub hard: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LogGrid {
    pub min: usize,
    pub max: usize,
    #[serde(default = "defaults::grid_points")]
    pub points: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CurveSpec {
    pub n_grid: Option<Vec<usize>>,
    pub log_grid: Option<LogGrid>,
    #[serde(default = "defaults::repeats")]
    pub repeats: usize,
}

impl Default for CurveSpec {
    fn default() -> Self {
        Self {
            n_grid: None,
            log_grid: None,
            repeats: defaults::repeats(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProbeSpec {
    #[serde(default = "defaults::epochs")]
    pub epochs: usize,
    #[serde(default = "defaults::batch_size")]
    pub batch_size: usize,
    #[serde(default = "defaults::learning_rate")]
    pub learning_rate: f64,
    #[serde(default = "defaults::l2_penalty")]
    pub l2_penalty: f64,
}

impl Default for ProbeSpec {
    fn default() -> Self {
        let p = ProbeConfig::default();
        Self {
            epochs: p.epochs,
            batch_size: p.batch_size,
            learning_rate: p.learning_rate,
            l2_penalty: p.l2_penalty,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FitSpec {
    pub window: Option<[f64; 2]>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    #[serde(default)]
    pub seed: u64,
    pub inputs: Inputs,
    pub pca: Option<PcaSpec>,
    pub kmeans: KMeansSpec,
    #[serde(default)]
    pub pruning: PruningSpec,
    #[serde(default)]
    pub curve: CurveSpec,
    #[serde(default)]
    pub probe: ProbeSpec,
    #[serde(default)]
    pub fit: FitSpec,
}

mod defaults {
    use crate::kmeans::KMeansConfig;

    pub fn max_iter() -> usize {
        KMeansConfig::default().max_iter
    }
    pub fn tol() -> f64 {
        KMeansConfig::default().tol
    }
    pub fn n_init() -> usize {
        KMeansConfig::default().n_init
    }
    pub fn grid_points() -> usize {
        10
    }
    pub fn repeats() -> usize {
        20
    }
    pub fn epochs() -> usize {
        100
    }
    pub fn batch_size() -> usize {
        128
    }
    pub fn learning_rate() -> f64 {
        0.1
    }
    pub fn l2_penalty() -> f64 {
        1e-4
    }
}

/// One pruning strategy of a run.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Strategy {
    pub method: Method,
    pub fraction: f64,
}

impl Strategy {
    /// Directory-safe name, e.g. `identity`, `simple-40`, `hard-12.5`.
    pub fn name(&self) -> String {
        if self.method == Method::Identity {
            return "identity".into();
        }
        let pct = (self.fraction * 1000.0).round() / 10.0;
        format!("{}-{}", self.method, pct)
    }
}

impl Manifest {
    pub fn parse(text: &str) -> Result<Self> {
        let m: Manifest = toml::from_str(text).map_err(|e| Error::Manifest(e.to_string()))?;
        m.validate()?;
        Ok(m)
    }

    /// Reads a manifest and resolves relative input paths against its directory.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut m = Self::parse(&text)?;
        let base = path.parent().unwrap_or(Path::new("."));
        for p in [
            &mut m.inputs.embeddings,
            &mut m.inputs.labels,
            &mut m.inputs.test_embeddings,
            &mut m.inputs.test_labels,
        ] {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        Ok(m)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("manifest serializes")
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Manifest(m));
        if self.kmeans.k == 0 {
            return bad("kmeans.k must be at least 1".into());
        }
        self.kmeans_config().validate().map_err(|e| Error::Manifest(e.to_string()))?;
        if let Some(pca) = &self.pca {
            match (pca.components, pca.variance) {
                (Some(0), None) => return bad("pca.components must be positive".into()),
                (Some(_), None) => {}
                (None, Some(v)) if v > 0.0 && v <= 1.0 => {}
                (None, Some(v)) => return bad(format!("pca.variance {v} outside (0, 1]")),
                _ => return bad("pca needs exactly one of `components` or `variance`".into()),
            }
        }
        let p = &self.pruning;
        for f in p.random.iter().chain(&p.simple).chain(&p.hard) {
            if !(0.0..1.0).contains(f) {
                return bad(format!("pruning fraction {f} outside [0, 1)"));
            }
        }
        if self.strategies().is_empty() {
            return bad("no pruning strategies selected".into());
        }
        let names: Vec<String> = self.strategies().iter().map(Strategy::name).collect();
        for (i, n) in names.iter().enumerate() {
            if names[..i].contains(n) {
                return bad(format!("strategy `{n}` listed twice"));
            }
        }
        let c = &self.curve;
        if c.repeats == 0 {
            return bad("curve.repeats must be at least 1".into());
        }
        match (&c.n_grid, &c.log_grid) {
            (Some(_), Some(_)) => return bad("give either curve.n_grid or curve.log_grid, not both".into()),
            (Some(g), None) if g.is_empty() || g.windows(2).any(|w| w[0] >= w[1]) || g[0] == 0 => {
                return bad(format!("curve.n_grid must be positive and strictly increasing: {g:?}"));
            }
            (None, Some(g)) => {
                probe::log_grid(g.min, g.max, g.points).map_err(|e| Error::Manifest(e.to_string()))?;
            }
            _ => {}
        }
        self.probe_config().validate().map_err(|e| Error::Manifest(e.to_string()))?;
        if let Some([lo, hi]) = self.fit.window {
            Window::new(lo, hi).map_err(|e| Error::Manifest(e.to_string()))?;
        }
        Ok(())
    }

    /// Strategies in run order: identity, random, simple, hard.
    pub fn strategies(&self) -> Vec<Strategy> {
        let p = &self.pruning;
        let mut out = Vec::new();
        if p.baseline {
            out.push(Strategy {
                method: Method::Identity,
                fraction: 0.0,
            });
        }
        for (method, fractions) in [
            (Method::Random, &p.random),
            (Method::Simple, &p.simple),
            (Method::Hard, &p.hard),
        ] {
            out.extend(fractions.iter().map(|&fraction| Strategy { method, fraction }));
        }
        out
    }

    /// The N-grid; `None` means the default grid for the smallest pool.
    pub fn n_grid(&self) -> Option<Vec<usize>> {
        match (&self.curve.n_grid, &self.curve.log_grid) {
            (Some(g), _) => Some(g.clone()),
            (None, Some(g)) => probe::log_grid(g.min, g.max, g.points).ok(),
            (None, None) => None,
        }
    }

    /// k-means settings; the seed is filled in by the runner.
    pub fn kmeans_config(&self) -> KMeansConfig {
        KMeansConfig {
            k: self.kmeans.k,
            max_iter: self.kmeans.max_iter,
            tol: self.kmeans.tol,
            n_init: self.kmeans.n_init,
            seed: 0,
        }
    }

    /// Probe settings; the seed is filled in by the runner.
    pub fn probe_config(&self) -> ProbeConfig {
        ProbeConfig {
            epochs: self.probe.epochs,
            batch_size: self.probe.batch_size,
            learning_rate: self.probe.learning_rate,
            l2_penalty: self.probe.l2_penalty,
            seed: 0,
        }
    }

    pub fn window(&self) -> Option<Window> {
        self.fit.window.map(|[min, max]| Window { min, max })
    }
}
