use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use kprune::data::removal_count;
use kprune::kmeans::{self, KMeansConfig};
use kprune::probe::{self, ProbeConfig, TestSet};
use kprune::pruner::{self, DistanceScores};
use kprune::scaling::{self, FitSummaryRow, Window};
use kprune::synth::{self, SynthSpec};
use kprune::{experiment, io, metrics, pca, Error, KeepList, Manifest, Method, Scope};

#[derive(Parser)]
#[command(name = "kprune", version, about = "Cluster-based dataset pruning in embedding space")]
struct Cli {
    /// Master seed for every random choice.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads (default: all cores). Results do not depend on it.
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Output file, prefix or directory, depending on the subcommand.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a labeled Gaussian mixture (train and test splits) into --out DIR.
    Synth(SynthArgs),
    /// Fit PCA and save the model under --out PREFIX.
    Pca(PcaArgs),
    /// Run k-means and save centroids, assignments and scores under --out PREFIX.
    Cluster(ClusterArgs),
    /// Build a keep-list from distance scores and write it to --out FILE.
    Prune(PruneArgs),
    /// Print the class balance of a labeled dataset, optionally after pruning.
    Balance(BalanceArgs),
    /// Train linear probes over an N-grid and write the learning curve to --out FILE.
    Train(TrainArgs),
    /// Fit power laws to learning curves and rank them.
    ScaleFit(ScaleFitArgs),
    /// Run a full experiment from a manifest into --out DIR.
    Run(RunArgs),
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long, default_value_t = 10)]
    classes: usize,
    #[arg(long, default_value_t = 64)]
    dims: usize,
    #[arg(long, default_value_t = 2000)]
    per_class: usize,
    #[arg(long, default_value_t = 500)]
    test_per_class: usize,
    /// Distance of each class mean from the origin.
    #[arg(long, default_value_t = 4.0)]
    radius: f64,
    /// Per-coordinate noise standard deviation.
    #[arg(long, default_value_t = 1.0)]
    sigma: f64,
}

#[derive(Args)]
struct PcaArgs {
    #[arg(long)]
    input: PathBuf,
    /// Number of components to keep.
    #[arg(long, conflicts_with = "variance", required_unless_present = "variance")]
    components: Option<usize>,
    /// Keep the fewest components explaining at least this fraction of variance.
    #[arg(long)]
    variance: Option<f64>,
    /// Also write the projected embeddings here.
    #[arg(long)]
    project: Option<PathBuf>,
}

#[derive(Args)]
struct ClusterArgs {
    #[arg(long)]
    input: PathBuf,
    #[arg(long, required_unless_present = "sweep_k")]
    k: Option<usize>,
    /// Comma-separated k values; prints `k,inertia` for each instead of saving a model.
    #[arg(long, value_delimiter = ',', conflicts_with = "k")]
    sweep_k: Option<Vec<usize>>,
    #[arg(long, default_value_t = 10)]
    n_init: usize,
    #[arg(long, default_value_t = 300)]
    max_iter: usize,
    #[arg(long, default_value_t = 1e-6)]
    tol: f64,
}

#[derive(Args)]
struct PruneArgs {
    /// N×1 distance scores (`<prefix>.scores.emb` from `cluster`).
    #[arg(long)]
    scores: PathBuf,
    /// Cluster assignments, required for `--scope per-cluster`.
    #[arg(long)]
    clusters: Option<PathBuf>,
    #[arg(long)]
    method: Method,
    #[arg(long)]
    fraction: f64,
    #[arg(long, default_value = "global")]
    scope: Scope,
    /// File whose digest is recorded as the keep-list's parent (default: --scores).
    #[arg(long)]
    parent: Option<PathBuf>,
}

#[derive(Args)]
struct BalanceArgs {
    #[arg(long)]
    labels: PathBuf,
    /// Keep-lists to evaluate; the unpruned dataset if none.
    #[arg(long)]
    keep: Vec<PathBuf>,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    embeddings: PathBuf,
    #[arg(long)]
    labels: PathBuf,
    #[arg(long)]
    test_embeddings: PathBuf,
    #[arg(long)]
    test_labels: PathBuf,
    /// Keep-list selecting the training pool (default: all samples).
    #[arg(long)]
    keep: Option<PathBuf>,
    /// Explicit comma-separated N-grid.
    #[arg(long, value_delimiter = ',', conflicts_with = "log_grid")]
    grid: Option<Vec<usize>>,
    /// Log-spaced grid as MIN:MAX:POINTS.
    #[arg(long)]
    log_grid: Option<String>,
    #[arg(long, default_value_t = 20)]
    repeats: usize,
    #[arg(long, default_value_t = 100)]
    epochs: usize,
    #[arg(long, default_value_t = 128)]
    batch_size: usize,
    #[arg(long, default_value_t = 0.1)]
    learning_rate: f64,
    #[arg(long, default_value_t = 1e-4)]
    l2_penalty: f64,
}

#[derive(Args)]
struct ScaleFitArgs {
    /// Learning curves as PATH or NAME=PATH.
    #[arg(required = true)]
    curves: Vec<String>,
    /// Fit window as MIN:MAX (inclusive).
    #[arg(long)]
    window: Option<Window>,
}

#[derive(Args)]
struct RunArgs {
    manifest: PathBuf,
}

enum Failure {
    Usage(String),
    Run(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Run(e)
    }
}

type CmdResult = Result<(), Failure>;

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error[usage]: {e}");
            return ExitCode::from(2);
        }
    }
    match dispatch(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(msg)) => {
            eprintln!("error[usage]: {msg}");
            ExitCode::from(2)
        }
        Err(Failure::Run(e)) => {
            eprintln!("error[{}]: {}", e.tag(), one_line(&e.to_string()));
            ExitCode::from(1)
        }
    }
}

fn one_line(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ")
}

fn dispatch(cli: &Cli) -> CmdResult {
    let seed = cli.seed.unwrap_or(0);
    let out = || {
        cli.out
            .as_deref()
            .ok_or_else(|| Failure::Usage("this subcommand needs --out".into()))
    };
    match &cli.command {
        Command::Synth(a) => cmd_synth(a, seed, out()?),
        Command::Pca(a) => cmd_pca(a, out()?),
        Command::Cluster(a) => cmd_cluster(a, seed, cli.out.as_deref()),
        Command::Prune(a) => cmd_prune(a, seed, out()?),
        Command::Balance(a) => cmd_balance(a),
        Command::Train(a) => cmd_train(a, seed, out()?),
        Command::ScaleFit(a) => cmd_scale_fit(a, cli.out.as_deref()),
        Command::Run(a) => cmd_run(a, cli.seed, out()?),
    }
}

fn create_dir(dir: &Path) -> Result<(), Error> {
    fs::create_dir_all(dir).map_err(|e| Error::Io {
        path: dir.to_path_buf(),
        source: e,
    })
}

fn create_parent(path: &Path) -> Result<(), Error> {
    match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => create_dir(p),
        _ => Ok(()),
    }
}

fn cmd_synth(a: &SynthArgs, seed: u64, out: &Path) -> CmdResult {
    let spec = SynthSpec {
        n_classes: a.classes,
        n_dims: a.dims,
        per_class: a.per_class,
        radius: a.radius,
        sigma: a.sigma,
        seed,
    };
    let (train, test) = synth::generate_with_test(&spec, a.test_per_class)?;
    create_dir(out)?;
    io::write_embeddings(&train.x, out.join("train.emb"))?;
    io::write_labels(&train.y, out.join("train.lbl"))?;
    io::write_embeddings(&test.x, out.join("test.emb"))?;
    io::write_labels(&test.y, out.join("test.lbl"))?;
    println!(
        "wrote {} train and {} test samples ({} classes, D={}) to {}",
        train.x.n_samples(),
        test.x.n_samples(),
        a.classes,
        a.dims,
        out.display()
    );
    Ok(())
}

fn cmd_pca(a: &PcaArgs, out: &Path) -> CmdResult {
    let x = io::read_embeddings(&a.input)?;
    let model = match (a.components, a.variance) {
        (Some(m), _) => pca::fit_pca(&x, m)?,
        (None, Some(v)) => {
            let full = pca::fit_pca(&x, x.n_samples().saturating_sub(1).min(x.n_dims()))?;
            full.truncate(pca::components_for_variance(&full, v)?)?
        }
        (None, None) => return Err(Failure::Usage("give --components or --variance".into())),
    };
    create_parent(out)?;
    pca::save_model(&model, out)?;
    if let Some(p) = &a.project {
        create_parent(p)?;
        io::write_embeddings(&pca::transform(&model, &x)?, p)?;
    }
    let explained = model.cumulative_variance_ratio().last().copied().unwrap_or(0.0);
    println!(
        "kept {} of {} dimensions, explained variance {:.3}",
        model.n_components(),
        model.n_dims(),
        explained
    );
    Ok(())
}

fn cmd_cluster(a: &ClusterArgs, seed: u64, out: Option<&Path>) -> CmdResult {
    let x = io::read_embeddings(&a.input)?;
    let cfg = KMeansConfig {
        k: a.k.unwrap_or(1),
        max_iter: a.max_iter,
        tol: a.tol,
        n_init: a.n_init,
        seed,
    };
    if let Some(ks) = &a.sweep_k {
        let rows = kmeans::sweep_k(&x, ks, &cfg)?;
        let mut text = String::from("k,inertia\n");
        for (k, inertia) in rows {
            text.push_str(&format!("{k},{inertia}\n"));
        }
        match out {
            Some(p) => {
                create_parent(p)?;
                fs::write(p, text).map_err(|e| Error::Io {
                    path: p.to_path_buf(),
                    source: e,
                })?;
            }
            None => print!("{text}"),
        }
        return Ok(());
    }
    let out = out.ok_or_else(|| Failure::Usage("cluster needs --out unless --sweep-k is given".into()))?;
    let model = kmeans::kmeans_fit(&x, &cfg)?;
    create_parent(out)?;
    kmeans::save_model(&model, out)?;
    println!(
        "k={} inertia={} iterations={} converged={}",
        model.k(),
        model.inertia,
        model.iterations_run,
        model.converged
    );
    Ok(())
}

fn load_scores(a: &PruneArgs) -> Result<DistanceScores, Failure> {
    let s = io::read_embeddings(&a.scores)?;
    if s.n_dims() != 1 {
        return Err(Error::Contract(format!(
            "{}: scores must have one column, found {}",
            a.scores.display(),
            s.n_dims()
        ))
        .into());
    }
    let distance = s.to_f64();
    match &a.clusters {
        Some(p) => {
            let c = io::read_labels(p)?;
            Ok(DistanceScores::new(distance, c.class_ids().to_vec())?)
        }
        None if a.scope == Scope::PerCluster => {
            Err(Failure::Usage("--scope per-cluster needs --clusters".into()))
        }
        None => Ok(DistanceScores::single_cluster(distance)?),
    }
}

fn cmd_prune(a: &PruneArgs, seed: u64, out: &Path) -> CmdResult {
    let scores = load_scores(a)?;
    let n = scores.n_samples();
    let kl = match a.method {
        Method::Simple => pruner::prune_simple(&scores, a.fraction, a.scope)?,
        Method::Hard => pruner::prune_hard(&scores, a.fraction, a.scope)?,
        Method::Random => pruner::prune_random(n, a.fraction, seed)?,
        Method::Identity => KeepList::identity(n),
        Method::Subsample => {
            let target = n - removal_count(a.fraction, n);
            pruner::subsample(&KeepList::identity(n), target, seed)?
        }
    };
    let parent = io::file_digest(a.parent.as_ref().unwrap_or(&a.scores))?;
    let kl = kl.with_parent_digest(parent);
    create_parent(out)?;
    io::write_keeplist(&kl, out)?;
    println!("kept {} of {} samples ({})", kl.len(), n, kl.method());
    Ok(())
}

fn cmd_balance(a: &BalanceArgs) -> CmdResult {
    let y = io::read_labels(&a.labels)?;
    if a.keep.is_empty() {
        let b = metrics::balance(&metrics::histogram(&y, None)?)?;
        println!("{}\t{}\t{b:.3}", a.labels.display(), y.n_samples());
    }
    for p in &a.keep {
        let kl = io::read_keeplist(p)?;
        let b = metrics::balance(&metrics::histogram(&y, Some(&kl))?)?;
        println!("{}\t{}\t{b:.3}", p.display(), kl.len());
    }
    Ok(())
}

fn parse_log_grid(s: &str) -> Result<Vec<usize>, Failure> {
    let parts: Vec<&str> = s.split(':').collect();
    let nums: Option<Vec<usize>> = parts.iter().map(|p| p.trim().parse().ok()).collect();
    match nums.as_deref() {
        Some(&[lo, hi, points]) => Ok(probe::log_grid(lo, hi, points)?),
        _ => Err(Failure::Usage(format!("--log-grid expects MIN:MAX:POINTS, got `{s}`"))),
    }
}

fn cmd_train(a: &TrainArgs, seed: u64, out: &Path) -> CmdResult {
    let x = io::read_embeddings(&a.embeddings)?;
    let y = io::read_labels(&a.labels)?;
    let tx = io::read_embeddings(&a.test_embeddings)?;
    let ty = io::read_labels(&a.test_labels)?;
    let keep = match &a.keep {
        Some(p) => io::read_keeplist(p)?,
        None => KeepList::identity(x.n_samples()),
    };
    let grid = match (&a.grid, &a.log_grid) {
        (Some(g), _) => g.clone(),
        (None, Some(s)) => parse_log_grid(s)?,
        (None, None) => probe::default_grid(keep.len(), y.n_classes() as usize)?,
    };
    let cfg = ProbeConfig {
        epochs: a.epochs,
        batch_size: a.batch_size,
        learning_rate: a.learning_rate,
        l2_penalty: a.l2_penalty,
        seed,
    };
    let test = TestSet { x: &tx, y: &ty };
    let curve = probe::learning_curve(&x, &y, &keep, test, &grid, a.repeats, &cfg)?;
    create_parent(out)?;
    probe::write_curve(&curve, out)?;
    for r in &curve.rows {
        println!("N={:<8} loss={:.4} acc={:.4}", r.n, r.mean_loss, r.mean_acc);
    }
    Ok(())
}

fn curve_name(arg: &str) -> (String, PathBuf) {
    match arg.split_once('=') {
        Some((name, path)) if !name.is_empty() => (name.to_string(), PathBuf::from(path)),
        _ => {
            let p = PathBuf::from(arg);
            let name = p
                .parent()
                .and_then(|d| d.file_name())
                .filter(|_| p.file_stem().is_some_and(|s| s == "curve"))
                .or_else(|| p.file_stem())
                .map_or_else(|| arg.to_string(), |s| s.to_string_lossy().into_owned());
            (name, p)
        }
    }
}

fn cmd_scale_fit(a: &ScaleFitArgs, out: Option<&Path>) -> CmdResult {
    let mut fits = Vec::with_capacity(a.curves.len());
    for arg in &a.curves {
        let (name, path) = curve_name(arg);
        let curve = probe::read_curve(&path)?;
        fits.push((name, scaling::fit_power_law(&curve.loss_points(), a.window)?));
    }
    if let Some(p) = out {
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
        create_parent(p)?;
        scaling::write_fit_summary(&rows, p)?;
    }
    print!("{}", scaling::format_table(&scaling::compare_fits(fits)));
    Ok(())
}

fn cmd_run(a: &RunArgs, seed: Option<u64>, out: &Path) -> CmdResult {
    let mut manifest = Manifest::load(&a.manifest)?;
    if let Some(s) = seed {
        manifest.seed = s;
    }
    let report = experiment::run(&manifest, out)?;
    println!("strategy\tn_kept\tbalance");
    for row in report.balance_table() {
        println!("{}\t{}\t{:.3}", row.strategy, row.n_kept, row.balance);
    }
    println!("\nstrategy\tnu\tstderr\tr2\tn_used");
    for name in &report.ranking {
        if let Some(r) = report.fits.iter().find(|r| &r.strategy == name) {
            println!("{}\t{:.3}\t{:.3}\t{:.3}\t{}", r.strategy, r.nu, r.stderr, r.r2, r.n_used);
        }
    }
    for (x, y) in &report.overlaps {
        println!("overlapping (nu +/- 2 stderr): {x} ~ {y}");
    }
    println!("report: {}", out.join(experiment::REPORT_FILE).display());
    Ok(())
}
