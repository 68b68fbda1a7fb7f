//! Power-law fits `loss ≈ A · N^(−ν)` by ordinary least squares on
//! `(ln N, ln loss)`.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::probe::csv_err;

/// Inclusive range of training-set sizes used by a fit.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Window {
    pub min: f64,
    pub max: f64,
}

impl Window {
    pub fn new(min: f64, max: f64) -> Result<Self> {
        if min.is_nan() || max.is_nan() || min > max {
            return Err(Error::Domain(format!("empty fit window [{min}, {max}]")));
        }
        Ok(Self { min, max })
    }

    pub fn contains(&self, n: f64) -> bool {
        self.min <= n && n <= self.max
    }
}

impl std::str::FromStr for Window {
    type Err = Error;

    /// Parses `MIN:MAX`.
    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::Domain(format!("window `{s}` is not MIN:MAX"));
        let (a, b) = s.split_once(':').ok_or_else(bad)?;
        let min = a.trim().parse().map_err(|_| bad())?;
        let max = b.trim().parse().map_err(|_| bad())?;
        Self::new(min, max)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Excluded {
    pub n: f64,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PowerLawFit {
    /// Scaling exponent; positive when the loss decays with `N`.
    pub nu: f64,
    pub ln_prefactor: f64,
    /// OLS standard error of the slope.
    pub stderr_nu: f64,
    pub r_squared: f64,
    pub n_used: usize,
    pub window: Option<Window>,
    pub excluded: Vec<Excluded>,
}

impl PowerLawFit {
    pub fn predict(&self, n: f64) -> f64 {
        (self.ln_prefactor - self.nu * n.ln()).exp()
    }
}

/// Fits `points = [(N, loss)]`, using only those inside `window` when given.
pub fn fit_power_law(points: &[(f64, f64)], window: Option<Window>) -> Result<PowerLawFit> {
    for (i, &(n, loss)) in points.iter().enumerate() {
        if !(n > 0.0 && n.is_finite()) {
            return Err(Error::Domain(format!("N={n} at point {i} must be positive")));
        }
        if !(loss > 0.0 && loss.is_finite()) {
            return Err(Error::Domain(format!("loss {loss} at N={n} must be positive")));
        }
    }
    let mut sorted: Vec<f64> = points.iter().map(|p| p.0).collect();
    sorted.sort_by(f64::total_cmp);
    if let Some(w) = sorted.windows(2).find(|w| w[0] == w[1]) {
        return Err(Error::Domain(format!("duplicate N={}", w[0])));
    }

    let mut used = Vec::new();
    let mut excluded = Vec::new();
    for &(n, loss) in points {
        match window {
            Some(w) if n < w.min => excluded.push(Excluded { n, reason: "below window".into() }),
            Some(w) if n > w.max => excluded.push(Excluded { n, reason: "above window".into() }),
            _ => used.push((n.ln(), loss.ln())),
        }
    }
    if used.len() < 3 {
        return Err(Error::Domain(format!(
            "power-law fit needs at least 3 points, {} usable",
            used.len()
        )));
    }

    let m = used.len() as f64;
    let mean_x = used.iter().map(|p| p.0).sum::<f64>() / m;
    let mean_y = used.iter().map(|p| p.1).sum::<f64>() / m;
    let sxx: f64 = used.iter().map(|p| (p.0 - mean_x).powi(2)).sum();
    let sxy: f64 = used.iter().map(|p| (p.0 - mean_x) * (p.1 - mean_y)).sum();
    let syy: f64 = used.iter().map(|p| (p.1 - mean_y).powi(2)).sum();
    let slope = sxy / sxx;
    let intercept = mean_y - slope * mean_x;
    let ssr: f64 = used
        .iter()
        .map(|p| (p.1 - intercept - slope * p.0).powi(2))
        .sum();
    let r_squared = if syy > 0.0 { (1.0 - ssr / syy).clamp(0.0, 1.0) } else { 1.0 };

    Ok(PowerLawFit {
        nu: -slope,
        ln_prefactor: intercept,
        stderr_nu: (ssr / (m - 2.0) / sxx).sqrt(),
        r_squared,
        n_used: used.len(),
        window,
        excluded,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct RankedFit {
    pub strategy: String,
    pub fit: PowerLawFit,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Ranking {
    /// Sorted by `nu`, largest first.
    pub rows: Vec<RankedFit>,
    /// Strategy pairs whose `nu ± 2·stderr` intervals overlap.
    pub overlaps: Vec<(String, String)>,
}

pub fn intervals_overlap(a: &PowerLawFit, b: &PowerLawFit) -> bool {
    (a.nu - b.nu).abs() <= 2.0 * (a.stderr_nu + b.stderr_nu)
}

pub fn compare_fits<I, S>(fits: I) -> Ranking
where
    I: IntoIterator<Item = (S, PowerLawFit)>,
    S: Into<String>,
{
    let mut rows: Vec<RankedFit> = fits
        .into_iter()
        .map(|(s, fit)| RankedFit { strategy: s.into(), fit })
        .collect();
    rows.sort_by(|a, b| b.fit.nu.total_cmp(&a.fit.nu).then_with(|| a.strategy.cmp(&b.strategy)));
    let mut overlaps = Vec::new();
    for (i, a) in rows.iter().enumerate() {
        for b in &rows[i + 1..] {
            if intervals_overlap(&a.fit, &b.fit) {
                overlaps.push((a.strategy.clone(), b.strategy.clone()));
            }
        }
    }
    Ranking { rows, overlaps }
}

/// Plain-text table: one line per strategy, exponent to three decimals.
pub fn format_table(ranking: &Ranking) -> String {
    let width = ranking
        .rows
        .iter()
        .map(|r| r.strategy.len())
        .max()
        .unwrap_or(0)
        .max("strategy".len());
    let mut out = format!("{:<width$}  {:>6}  {:>6}  {:>6}  {:>6}\n", "strategy", "nu", "stderr", "r2", "n_used");
    for r in &ranking.rows {
        let _ = writeln!(
            out,
            "{:<width$}  {:>6.3}  {:>6.3}  {:>6.3}  {:>6}",
            r.strategy, r.fit.nu, r.fit.stderr_nu, r.fit.r_squared, r.fit.n_used
        );
    }
    if !ranking.overlaps.is_empty() {
        out.push_str("overlapping (nu +/- 2 stderr):");
        for (a, b) in &ranking.overlaps {
            let _ = write!(out, " {a}~{b}");
        }
        out.push('\n');
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitSummaryRow {
    pub strategy: String,
    pub nu: f64,
    pub stderr: f64,
    pub r2: f64,
    pub n_used: usize,
}

impl From<&RankedFit> for FitSummaryRow {
    fn from(r: &RankedFit) -> Self {
        Self {
            strategy: r.strategy.clone(),
            nu: r.fit.nu,
            stderr: r.fit.stderr_nu,
            r2: r.fit.r_squared,
            n_used: r.fit.n_used,
        }
    }
}

/// Writes `strategy,nu,stderr,r2,n_used` rows.
pub fn write_fit_summary(rows: &[FitSummaryRow], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_err(path, e))?;
    if rows.is_empty() {
        w.write_record(["strategy", "nu", "stderr", "r2", "n_used"])
            .map_err(|e| csv_err(path, e))?;
    }
    for row in rows {
        w.serialize(row).map_err(|e| csv_err(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_fit_summary(path: impl AsRef<Path>) -> Result<Vec<FitSummaryRow>> {
    let path = path.as_ref();
    let mut r = csv::Reader::from_path(path).map_err(|e| csv_err(path, e))?;
    r.deserialize()
        .collect::<std::result::Result<Vec<_>, _>>()
        .map_err(|e| csv_err(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn curve(nu: f64, a: f64) -> Vec<(f64, f64)> {
        (0..20)
            .map(|i| {
                let n = 10f64.powf(2.0 + 3.0 * i as f64 / 19.0);
                (n, a * n.powf(-nu))
            })
            .collect()
    }

    #[test]
    fn noiseless_recovery() {
        let fit = fit_power_law(&curve(0.4, 2.0), None).unwrap();
        assert!((fit.nu - 0.4).abs() < 1e-10);
        assert!(fit.stderr_nu <= 1e-10);
        assert!((fit.r_squared - 1.0).abs() < 1e-12);
        assert!((fit.ln_prefactor - 2f64.ln()).abs() < 1e-9);
        assert_eq!(fit.n_used, 20);
        assert!((fit.predict(1000.0) - 2.0 * 1000f64.powf(-0.4)).abs() < 1e-9);
    }

    #[test]
    fn window_excludes_points() {
        let pts = curve(0.4, 2.0);
        let w = Window::new(1e3, 1e4).unwrap();
        let fit = fit_power_law(&pts, Some(w)).unwrap();
        let manual: Vec<(f64, f64)> = pts.iter().copied().filter(|p| w.contains(p.0)).collect();
        let plain = fit_power_law(&manual, None).unwrap();
        assert_eq!(fit.nu, plain.nu);
        assert_eq!(fit.n_used, manual.len());
        assert_eq!(fit.excluded.len(), pts.len() - manual.len());
        assert!(fit.excluded.iter().any(|e| e.reason == "below window"));
        assert!(fit.excluded.iter().any(|e| e.reason == "above window"));
    }

    #[test]
    fn fit_errors() {
        assert!(fit_power_law(&[(1.0, 1.0), (2.0, 0.5)], None).is_err());
        assert!(fit_power_law(&[(1.0, 1.0), (2.0, 0.0), (3.0, 0.2)], None).is_err());
        assert!(fit_power_law(&[(1.0, 1.0), (2.0, 0.5), (2.0, 0.4)], None).is_err());
        let w = Window::new(1.0, 2.0).unwrap();
        assert!(fit_power_law(&[(1.0, 1.0), (2.0, 0.5), (3.0, 0.4)], Some(w)).is_err());
    }

    #[test]
    fn window_parsing() {
        let w: Window = "100:5000".parse().unwrap();
        assert_eq!((w.min, w.max), (100.0, 5000.0));
        assert!("100".parse::<Window>().is_err());
        assert!("9:1".parse::<Window>().is_err());
    }

    fn with(nu: f64, se: f64) -> PowerLawFit {
        PowerLawFit {
            nu,
            ln_prefactor: 0.0,
            stderr_nu: se,
            r_squared: 1.0,
            n_used: 5,
            window: None,
            excluded: vec![],
        }
    }

    #[test]
    fn ranking() {
        let single = compare_fits([("a", with(0.3, 0.01))]);
        assert_eq!(single.rows.len(), 1);

        let r = compare_fits([("random", with(0.39, 0.005)), ("simple-40", with(0.42, 0.005))]);
        assert_eq!(r.rows[0].strategy, "simple-40");
        assert!(r.overlaps.is_empty());

        let same = compare_fits([("a", with(0.4, 0.01)), ("b", with(0.4, 0.01))]);
        assert_eq!(same.overlaps, vec![("a".to_string(), "b".to_string())]);
        assert!(format_table(&same).contains("0.400"));
    }

    #[test]
    fn summary_csv_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("fits.csv");
        let rows = vec![FitSummaryRow {
            strategy: "simple-40".into(),
            nu: 0.421,
            stderr: 0.005,
            r2: 0.99,
            n_used: 6,
        }];
        write_fit_summary(&rows, &p).unwrap();
        assert!(std::fs::read_to_string(&p).unwrap().starts_with("strategy,nu,stderr,r2,n_used\n"));
        assert_eq!(read_fit_summary(&p).unwrap(), rows);
    }
}
