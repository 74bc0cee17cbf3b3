//! Monte Carlo evaluation of the estimators on the simulated design.

use std::collections::BTreeMap;
use std::path::Path;

use log::warn;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::comparators::{comparator_glm, comparator_glm_naive};
use super::dgp::{simulate_dataset, DgpConfig};
use crate::error::{Error, Result};
use crate::features::{FeatureKind, FeatureMap};
use crate::inference::{wald_inference, DEFAULT_ALPHA};
use crate::tmle::{run_tmle_adjusted, run_tmle_basic, TmleConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EstimatorName {
    TmleBasic,
    TmleAdjusted,
    Glm,
    GlmNaive,
}

impl EstimatorName {
    pub const ALL: [EstimatorName; 4] = [
        EstimatorName::TmleBasic,
        EstimatorName::TmleAdjusted,
        EstimatorName::Glm,
        EstimatorName::GlmNaive,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            EstimatorName::TmleBasic => "tmle-basic",
            EstimatorName::TmleAdjusted => "tmle-adjusted",
            EstimatorName::Glm => "glm",
            EstimatorName::GlmNaive => "glm-naive",
        }
    }
}

impl std::fmt::Display for EstimatorName {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for EstimatorName {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        EstimatorName::ALL
            .into_iter()
            .find(|e| e.as_str() == s)
            .ok_or_else(|| Error::Config(format!("unknown estimator '{s}'")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct McConfig {
    /// Cases per replicate; one cell of the table per value.
    #[serde(default = "default_sizes")]
    pub n: Vec<usize>,
    #[serde(default = "default_replicates")]
    pub replicates: usize,
    #[serde(default = "default_estimators")]
    pub estimators: Vec<EstimatorName>,
    #[serde(default)]
    pub master_seed: u64,
    #[serde(default)]
    pub dgp: DgpConfig,
    #[serde(default)]
    pub features: FeatureKind,
    #[serde(default)]
    pub tmle: TmleConfig,
    #[serde(default = "default_alpha")]
    pub alpha: f64,
}

fn default_sizes() -> Vec<usize> {
    vec![1000]
}

fn default_replicates() -> usize {
    200
}

fn default_estimators() -> Vec<EstimatorName> {
    EstimatorName::ALL.to_vec()
}

fn default_alpha() -> f64 {
    DEFAULT_ALPHA
}

impl Default for McConfig {
    fn default() -> Self {
        Self {
            n: default_sizes(),
            replicates: default_replicates(),
            estimators: default_estimators(),
            master_seed: 0,
            dgp: DgpConfig::default(),
            features: FeatureKind::default(),
            tmle: TmleConfig::default(),
            alpha: default_alpha(),
        }
    }
}

impl McConfig {
    pub fn validate(&self) -> Result<()> {
        if self.replicates < 2 {
            return Err(Error::Config("replicates must be at least 2".into()));
        }
        if self.n.is_empty() || self.n.iter().any(|&n| n < 20) {
            return Err(Error::Config("every n must be at least 20".into()));
        }
        if self.estimators.is_empty() {
            return Err(Error::Config("no estimators selected".into()));
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::Config("alpha must lie in (0, 1)".into()));
        }
        self.dgp.validate()?;
        let map = FeatureMap::new(self.features.clone(), 2)?;
        if map.dim() != 2 {
            return Err(Error::Config(
                "the simulated truth has two coefficients; use a two-dimensional feature map".into(),
            ));
        }
        Ok(())
    }
}

/// Seed of replicate `r`, mixed from the master seed so that replicates are
/// independent of scheduling.
pub fn replicate_seed(master: u64, r: u64) -> u64 {
    // splitmix64 finalizer over a combined state
    let mut z = master
        .wrapping_mul(0x9E37_79B9_7F4A_7C15)
        .wrapping_add(r.wrapping_add(1).wrapping_mul(0xBF58_476D_1CE4_E5B9));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// One coefficient of one estimator on one replicate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicateRecord {
    pub estimator: EstimatorName,
    pub n: usize,
    pub replicate: usize,
    pub seed: u64,
    pub coef: usize,
    pub estimate: Option<f64>,
    pub se: Option<f64>,
    pub ci_low: Option<f64>,
    pub ci_high: Option<f64>,
    /// `ok`, or the reason the replicate was excluded.
    pub status: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub estimator: EstimatorName,
    pub n: usize,
    pub coef: usize,
    pub bias: f64,
    pub se: f64,
    pub rmse: f64,
    pub coverage: f64,
    pub excluded: usize,
    /// Zero spread across replicates; coverage is then reported as NaN.
    #[serde(skip)]
    pub degenerate: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct McOutput {
    pub metrics: Vec<MetricsRow>,
    pub replicates: Vec<ReplicateRecord>,
    /// Redrawn individuals per sample size.
    pub inversion_failures: BTreeMap<usize, usize>,
    /// Mean strain-missingness fraction per sample size.
    pub missing_fraction: BTreeMap<usize, f64>,
}

struct EstimateWithCi {
    beta: Vec<f64>,
    se: Vec<f64>,
    ci_low: Vec<f64>,
    ci_high: Vec<f64>,
}

fn run_estimator(
    name: EstimatorName,
    ds: &crate::data::CaseOnlyDataset,
    map: &FeatureMap,
    cfg: &McConfig,
) -> Result<EstimateWithCi> {
    let report = match name {
        EstimatorName::TmleBasic => wald_inference(&run_tmle_basic(ds, map, &cfg.tmle)?, cfg.alpha)?,
        EstimatorName::TmleAdjusted => wald_inference(&run_tmle_adjusted(ds, map, &cfg.tmle)?, cfg.alpha)?,
        EstimatorName::Glm => comparator_glm(ds, map)?.inference(cfg.alpha)?,
        EstimatorName::GlmNaive => comparator_glm_naive(ds, map)?.inference(cfg.alpha)?,
    };
    Ok(EstimateWithCi {
        beta: report.beta,
        se: report.se,
        ci_low: report.ci_low,
        ci_high: report.ci_high,
    })
}

struct ReplicateResult {
    records: Vec<ReplicateRecord>,
    inversion_failures: usize,
    missing_fraction: f64,
}

fn run_replicate(cfg: &McConfig, map: &FeatureMap, n: usize, r: usize) -> Result<ReplicateResult> {
    let seed = replicate_seed(cfg.master_seed, r as u64);
    let sim = simulate_dataset(n, seed, &cfg.dgp)?;
    let mut records = Vec::new();
    for &name in &cfg.estimators {
        let outcome = run_estimator(name, &sim.dataset, map, cfg);
        if let Err(e) = &outcome {
            warn!("{name} failed on replicate {r} (n = {n}): {e}");
        }
        for coef in 0..2 {
            let rec = match &outcome {
                Ok(est) => ReplicateRecord {
                    estimator: name,
                    n,
                    replicate: r,
                    seed,
                    coef,
                    estimate: Some(est.beta[coef]),
                    se: Some(est.se[coef]),
                    ci_low: Some(est.ci_low[coef]),
                    ci_high: Some(est.ci_high[coef]),
                    status: "ok".into(),
                },
                Err(e) => ReplicateRecord {
                    estimator: name,
                    n,
                    replicate: r,
                    seed,
                    coef,
                    estimate: None,
                    se: None,
                    ci_low: None,
                    ci_high: None,
                    status: e.to_string(),
                },
            };
            records.push(rec);
        }
    }
    Ok(ReplicateResult {
        records,
        inversion_failures: sim.inversion_failures,
        missing_fraction: sim.missing_fraction(),
    })
}

/// Bias, standard deviation, RMSE and coverage of a set of estimates.
pub fn summarize(estimates: &[f64], intervals: &[(f64, f64)], truth: f64) -> (f64, f64, f64, f64, bool) {
    let m = estimates.len();
    if m == 0 {
        return (f64::NAN, f64::NAN, f64::NAN, f64::NAN, false);
    }
    let mean = estimates.iter().sum::<f64>() / m as f64;
    let bias = mean - truth;
    let se = if m > 1 {
        (estimates.iter().map(|e| (e - mean).powi(2)).sum::<f64>() / (m - 1) as f64).sqrt()
    } else {
        f64::NAN
    };
    let rmse = (bias * bias + se * se).sqrt();
    let degenerate = se == 0.0;
    let coverage = if degenerate {
        f64::NAN
    } else {
        intervals.iter().filter(|(lo, hi)| *lo <= truth && truth <= *hi).count() as f64 / m as f64
    };
    (bias, se, rmse, coverage, degenerate)
}

/// Runs every replicate on a pool of `workers` threads (the global pool when
/// `None`). Output does not depend on the number of workers.
pub fn run_monte_carlo(cfg: &McConfig, workers: Option<usize>) -> Result<McOutput> {
    cfg.validate()?;
    let map = FeatureMap::new(cfg.features.clone(), 2)?;
    let jobs: Vec<(usize, usize)> = cfg
        .n
        .iter()
        .flat_map(|&n| (0..cfg.replicates).map(move |r| (n, r)))
        .collect();
    let work = || -> Result<Vec<ReplicateResult>> {
        jobs.par_iter()
            .map(|&(n, r)| run_replicate(cfg, &map, n, r))
            .collect()
    };
    let results = match workers {
        Some(w) => rayon::ThreadPoolBuilder::new()
            .num_threads(w.max(1))
            .build()
            .map_err(|e| Error::InvalidArgument(format!("thread pool: {e}")))?
            .install(work)?,
        None => work()?,
    };

    let mut inversion_failures = BTreeMap::new();
    let mut missing_fraction = BTreeMap::new();
    for (&(n, _), res) in jobs.iter().zip(&results) {
        *inversion_failures.entry(n).or_insert(0) += res.inversion_failures;
        *missing_fraction.entry(n).or_insert(0.0) += res.missing_fraction / cfg.replicates as f64;
    }
    let replicates: Vec<ReplicateRecord> = results.into_iter().flat_map(|r| r.records).collect();

    let mut metrics = Vec::new();
    for &name in &cfg.estimators {
        for &n in &cfg.n {
            for coef in 0..2 {
                let cell: Vec<&ReplicateRecord> = replicates
                    .iter()
                    .filter(|r| r.estimator == name && r.n == n && r.coef == coef)
                    .collect();
                let ok: Vec<&ReplicateRecord> = cell.iter().copied().filter(|r| r.estimate.is_some()).collect();
                let est: Vec<f64> = ok.iter().map(|r| r.estimate.unwrap_or(f64::NAN)).collect();
                let ci: Vec<(f64, f64)> = ok
                    .iter()
                    .map(|r| (r.ci_low.unwrap_or(f64::NAN), r.ci_high.unwrap_or(f64::NAN)))
                    .collect();
                let (bias, se, rmse, coverage, degenerate) = summarize(&est, &ci, cfg.dgp.beta_true[coef]);
                metrics.push(MetricsRow {
                    estimator: name,
                    n,
                    coef,
                    bias,
                    se,
                    rmse,
                    coverage,
                    excluded: cell.len() - ok.len(),
                    degenerate,
                });
            }
        }
    }
    Ok(McOutput {
        metrics,
        replicates,
        inversion_failures,
        missing_fraction,
    })
}

fn write_rows<T: Serialize>(rows: &[T], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

/// `estimator,n,coef,bias,se,rmse,coverage,excluded`.
pub fn write_metrics(rows: &[MetricsRow], path: &Path) -> Result<()> {
    write_rows(rows, path)
}

pub fn write_replicates(rows: &[ReplicateRecord], path: &Path) -> Result<()> {
    write_rows(rows, path)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn two_replicate_arithmetic() {
        let (bias, se, rmse, coverage, degenerate) =
            summarize(&[0.4, 0.6], &[(0.3, 0.5), (0.45, 0.7)], 0.5);
        assert!(bias.abs() < 1e-15);
        assert!((se - 0.141421).abs() < 1e-6);
        assert!((rmse - 0.141421).abs() < 1e-6);
        assert_eq!(coverage, 1.0);
        assert!(!degenerate);
    }

    #[test]
    fn exact_estimator_is_degenerate() {
        let (bias, se, rmse, coverage, degenerate) = summarize(&[0.5; 5], &[(0.5, 0.5); 5], 0.5);
        assert_eq!((bias, se, rmse), (0.0, 0.0, 0.0));
        assert!(coverage.is_nan() && degenerate);
    }

    #[test]
    fn rmse_identity() {
        let est = [0.1, 0.7, 0.35, 0.52, 0.48];
        let (bias, se, rmse, _, _) = summarize(&est, &[(0.0, 1.0); 5], 0.5);
        assert!((rmse * rmse - bias * bias - se * se).abs() < 1e-10);
    }

    #[test]
    fn seeds_differ_by_replicate() {
        let seeds: std::collections::BTreeSet<u64> = (0..1000).map(|r| replicate_seed(7, r)).collect();
        assert_eq!(seeds.len(), 1000);
        assert_ne!(replicate_seed(7, 0), replicate_seed(8, 0));
    }

    #[test]
    fn estimator_names_round_trip() {
        for e in EstimatorName::ALL {
            assert_eq!(e.as_str().parse::<EstimatorName>().unwrap(), e);
        }
        assert!("tmle".parse::<EstimatorName>().is_err());
    }

    #[test]
    fn rejects_single_replicate() {
        let cfg = McConfig {
            replicates: 1,
            ..McConfig::default()
        };
        assert!(matches!(run_monte_carlo(&cfg, Some(1)), Err(Error::Config(_))));
    }
}
