//! End-to-end runs driven by a [`Manifest`].
//!
//! Output layout:
//!
//! ```text
//! out/
//!   report.json
//!   balance.csv
//!   fits.csv
//!   pca/model.*          (when PCA is enabled)
//!   kmeans/model.*
//!   <strategy>/keep.json
//!   <strategy>/curve.csv
//! ```
//!
//! PCA, when enabled, only feeds clustering; probes train on the raw
//! embeddings. The identity strategy keeps every sample, so its learning
//! curve is the random-pruning baseline obtained by subsampling per N.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::data::{KeepList, Method};
use crate::error::{Error, Result};
use crate::manifest::{Manifest, Strategy};
use crate::scaling::{self, FitSummaryRow};
use crate::{io, kmeans, metrics, pca, probe, pruner, rng};

const TAG_KMEANS: u64 = 1;
const TAG_PROBE: u64 = 2;
const TAG_RANDOM: u64 = 0x100;

pub const REPORT_FILE: &str = "report.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FileRecord {
    /// Relative to the output directory for outputs, as given for inputs.
    pub path: String,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PcaSummary {
    pub n_components: usize,
    pub explained_variance: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KMeansSummary {
    pub k: usize,
    pub seed: u64,
    pub inertia: f64,
    pub iterations_run: usize,
    pub converged: bool,
    pub best_init: usize,
    pub cluster_sizes: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StrategyReport {
    pub name: String,
    pub method: Method,
    pub fraction_removed: f64,
    pub n_kept: usize,
    pub balance: f64,
    pub keep: FileRecord,
    pub curve: FileRecord,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BalanceRow {
    pub strategy: String,
    pub n_kept: usize,
    pub balance: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub manifest: String,
    pub inputs: Vec<FileRecord>,
    pub pca: Option<PcaSummary>,
    pub kmeans: KMeansSummary,
    pub balance_unpruned: f64,
    pub n_grid: Vec<usize>,
    pub probe_seed: u64,
    pub strategies: Vec<StrategyReport>,
    /// Manifest order.
    pub fits: Vec<FitSummaryRow>,
    /// Strategy names by exponent, largest first.
    pub ranking: Vec<String>,
    pub overlaps: Vec<(String, String)>,
    /// Every output file other than the report itself.
    pub outputs: Vec<FileRecord>,
    /// Wall-clock seconds per stage.
    pub timings: BTreeMap<String, f64>,
}

impl ExperimentReport {
    /// Digests of all outputs, keyed by path. Excludes timings.
    pub fn digests(&self) -> BTreeMap<String, String> {
        self.outputs
            .iter()
            .map(|f| (f.path.clone(), f.sha256.clone()))
            .collect()
    }

    pub fn balance_table(&self) -> Vec<BalanceRow> {
        self.strategies
            .iter()
            .map(|s| BalanceRow {
                strategy: s.name.clone(),
                n_kept: s.n_kept,
                balance: s.balance,
            })
            .collect()
    }
}

struct Outputs {
    root: PathBuf,
    records: Vec<FileRecord>,
}

impl Outputs {
    fn record(&mut self, path: &Path) -> Result<FileRecord> {
        let rel = path
            .strip_prefix(&self.root)
            .unwrap_or(path)
            .to_string_lossy()
            .replace('\\', "/");
        let rec = FileRecord {
            path: rel,
            sha256: io::file_digest(path)?,
        };
        self.records.push(rec.clone());
        Ok(rec)
    }

    fn dir(&self, name: &str) -> Result<PathBuf> {
        let d = self.root.join(name);
        fs::create_dir_all(&d).map_err(|e| Error::io(&d, e))?;
        Ok(d)
    }
}

fn timed<T>(timings: &mut BTreeMap<String, f64>, stage: &str, f: impl FnOnce() -> Result<T>) -> Result<T> {
    let t = Instant::now();
    let out = f().map_err(|e| Error::stage(stage, e))?;
    timings.insert(stage.to_string(), t.elapsed().as_secs_f64());
    Ok(out)
}

fn input_record(path: &Path) -> Result<FileRecord> {
    Ok(FileRecord {
        path: path.to_string_lossy().into_owned(),
        sha256: io::file_digest(path)?,
    })
}

fn write_balance(rows: &[BalanceRow], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| probe::csv_err(path, e))?;
    for r in rows {
        w.serialize(r).map_err(|e| probe::csv_err(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Executes every stage of `manifest`, writing all artifacts under `out`.
/// Files from completed stages are kept if a later stage fails.
pub fn run(manifest: &Manifest, out: impl AsRef<Path>) -> Result<ExperimentReport> {
    manifest.validate()?;
    let root = out.as_ref().to_path_buf();
    fs::create_dir_all(&root).map_err(|e| Error::io(&root, e))?;
    let mut outputs = Outputs {
        root: root.clone(),
        records: Vec::new(),
    };
    let mut timings = BTreeMap::new();
    let seed = manifest.seed;
    let inp = &manifest.inputs;

    let (x, y, tx, ty, inputs) = timed(&mut timings, "load", || {
        let x = io::read_embeddings(&inp.embeddings)?;
        let y = io::read_labels(&inp.labels)?;
        let tx = io::read_embeddings(&inp.test_embeddings)?;
        let ty = io::read_labels(&inp.test_labels)?;
        if x.n_samples() != y.n_samples() {
            return Err(Error::Contract(format!(
                "{} embeddings but {} labels",
                x.n_samples(),
                y.n_samples()
            )));
        }
        let inputs = [&inp.embeddings, &inp.labels, &inp.test_embeddings, &inp.test_labels]
            .into_iter()
            .map(|p| input_record(p))
            .collect::<Result<Vec<_>>>()?;
        Ok((x, y, tx, ty, inputs))
    })?;
    let source_digest = inputs[0].sha256.clone();

    let (cluster_input, pca_summary) = match &manifest.pca {
        None => (None, None),
        Some(spec) => timed(&mut timings, "pca", || {
            let model = match (spec.components, spec.variance) {
                (Some(m), _) => pca::fit_pca(&x, m)?,
                (None, Some(v)) => {
                    let full = x.n_samples().saturating_sub(1).min(x.n_dims());
                    let full = pca::fit_pca(&x, full)?;
                    let m = pca::components_for_variance(&full, v)?;
                    full.truncate(m)?
                }
                (None, None) => unreachable!("validated manifest"),
            };
            pca::save_model(&model, outputs.dir("pca")?.join("model"))?;
            let (mean, comps, meta) = pca::model_paths(&root.join("pca").join("model"));
            for p in [mean, comps, meta] {
                outputs.record(&p)?;
            }
            let summary = PcaSummary {
                n_components: model.n_components(),
                explained_variance: model.cumulative_variance_ratio().last().copied().unwrap_or(0.0),
            };
            Ok((Some(pca::transform(&model, &x)?), Some(summary)))
        })?,
    };

    let kcfg = manifest.kmeans_config().with_seed(rng::derive(seed, TAG_KMEANS));
    let model = timed(&mut timings, "kmeans", || {
        let model = kmeans::kmeans_fit(cluster_input.as_ref().unwrap_or(&x), &kcfg)?;
        let prefix = outputs.dir("kmeans")?.join("model");
        kmeans::save_model(&model, &prefix)?;
        for p in kmeans::model_paths(&prefix) {
            outputs.record(&p)?;
        }
        Ok(model)
    })?;
    drop(cluster_input);
    let kmeans_summary = KMeansSummary {
        k: model.k(),
        seed: kcfg.seed,
        inertia: model.inertia,
        iterations_run: model.iterations_run,
        converged: model.converged,
        best_init: model.best_init,
        cluster_sizes: model.cluster_sizes(),
    };

    let strategies = manifest.strategies();
    let names: Vec<String> = strategies.iter().map(Strategy::name).collect();
    let keeps = timed(&mut timings, "prune", || {
        let scores = pruner::DistanceScores::from_model(&model);
        let scope = manifest.pruning.scope;
        let n = x.n_samples();
        let mut keeps = Vec::with_capacity(strategies.len());
        for (i, s) in strategies.iter().enumerate() {
            let kl = match s.method {
                Method::Identity => KeepList::identity(n),
                Method::Random => pruner::prune_random(n, s.fraction, rng::derive(seed, TAG_RANDOM + i as u64))?,
                Method::Simple => pruner::prune_simple(&scores, s.fraction, scope)?,
                Method::Hard => pruner::prune_hard(&scores, s.fraction, scope)?,
                Method::Subsample => unreachable!("not a manifest strategy"),
            }
            .with_parent_digest(source_digest.clone());
            let path = outputs.dir(&names[i])?.join("keep.json");
            io::write_keeplist(&kl, &path)?;
            let rec = outputs.record(&path)?;
            keeps.push((kl, rec));
        }
        Ok(keeps)
    })?;

    let (balance_unpruned, balances) = timed(&mut timings, "balance", || {
        let full = metrics::balance(&metrics::histogram(&y, None)?)?;
        let mut rows = Vec::with_capacity(keeps.len());
        for ((kl, _), name) in keeps.iter().zip(&names) {
            rows.push(BalanceRow {
                strategy: name.clone(),
                n_kept: kl.len(),
                balance: metrics::balance(&metrics::histogram(&y, Some(kl))?)?,
            });
        }
        let path = root.join("balance.csv");
        write_balance(&rows, &path)?;
        outputs.record(&path)?;
        Ok((full, rows))
    })?;

    let c = y.n_classes() as usize;
    let n_grid = match manifest.n_grid() {
        Some(g) => g,
        None => {
            let pool = keeps.iter().map(|(kl, _)| kl.len()).min().unwrap_or(0);
            probe::default_grid(pool, c).map_err(|e| Error::stage("curve", e))?
        }
    };
    let probe_seed = rng::derive(seed, TAG_PROBE);
    let pcfg = probe::ProbeConfig {
        seed: probe_seed,
        ..manifest.probe_config()
    };
    let curves = timed(&mut timings, "curve", || {
        for ((kl, _), name) in keeps.iter().zip(&names) {
            if let Some(&n) = n_grid.iter().find(|&&n| n > kl.len()) {
                return Err(Error::Contract(format!(
                    "strategy `{name}` keeps {} samples but the N-grid asks for N={n}",
                    kl.len()
                )));
            }
        }
        let mut curves = Vec::with_capacity(keeps.len());
        for ((kl, _), name) in keeps.iter().zip(&names) {
            let test = probe::TestSet { x: &tx, y: &ty };
            let curve = probe::learning_curve(&x, &y, kl, test, &n_grid, manifest.curve.repeats, &pcfg)
                .map_err(|e| Error::stage(name.as_str(), e))?;
            let path = root.join(name).join("curve.csv");
            probe::write_curve(&curve, &path)?;
            let rec = outputs.record(&path)?;
            curves.push((curve, rec));
        }
        Ok(curves)
    })?;

    let (fits, ranking) = timed(&mut timings, "fit", || {
        let mut fits = Vec::with_capacity(curves.len());
        for ((curve, _), name) in curves.iter().zip(&names) {
            let fit = scaling::fit_power_law(&curve.loss_points(), manifest.window())
                .map_err(|e| Error::stage(name.as_str(), e))?;
            fits.push((name.clone(), fit));
        }
        let rows: Vec<FitSummaryRow> = fits
            .iter()
            .map(|(name, f)| FitSummaryRow {
                strategy: name.clone(),
                nu: f.nu,
                stderr: f.stderr_nu,
                r2: f.r_squared,
                n_used: f.n_used,
            })
            .collect();
        let path = root.join("fits.csv");
        scaling::write_fit_summary(&rows, &path)?;
        outputs.record(&path)?;
        Ok((rows, scaling::compare_fits(fits)))
    })?;

    let strategies = strategies
        .iter()
        .zip(keeps)
        .zip(curves)
        .zip(balances)
        .map(|(((s, (kl, keep)), (_, curve)), b)| StrategyReport {
            name: b.strategy,
            method: s.method,
            fraction_removed: s.fraction,
            n_kept: kl.len(),
            balance: b.balance,
            keep,
            curve,
        })
        .collect();

    let report = ExperimentReport {
        manifest: manifest.to_toml(),
        inputs,
        pca: pca_summary,
        kmeans: kmeans_summary,
        balance_unpruned,
        n_grid,
        probe_seed,
        strategies,
        fits,
        ranking: ranking.rows.iter().map(|r| r.strategy.clone()).collect(),
        overlaps: ranking.overlaps,
        outputs: outputs.records,
        timings,
    };
    write_report(&report, root.join(REPORT_FILE))?;
    Ok(report)
}

pub fn write_report(report: &ExperimentReport, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut text = serde_json::to_string_pretty(report).expect("report serializes");
    text.push('\n');
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn read_report(path: impl AsRef<Path>) -> Result<ExperimentReport> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Parse {
        path: path.to_path_buf(),
        message: e.to_string(),
    })
}

/// Checks that every output recorded in `out/report.json` exists with the
/// recorded digest. Returns the paths that are missing or differ.
pub fn verify_report(out: impl AsRef<Path>) -> Result<Vec<String>> {
    let root = out.as_ref();
    let report = read_report(root.join(REPORT_FILE))?;
    let mut bad = Vec::new();
    for f in &report.outputs {
        match io::file_digest(root.join(&f.path)) {
            Ok(d) if d == f.sha256 => {}
            _ => bad.push(f.path.clone()),
        }
    }
    Ok(bad)
}
