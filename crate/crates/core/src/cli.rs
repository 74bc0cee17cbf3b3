//! Command-line front end: `fit`, `simulate` and `mc`.

use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use crate::data::{load_csv, write_csv, CaseOnlyDataset, ColumnSpec, OverlapReport};
use crate::error::{Error, Result};
use crate::features::{gram_report, FeatureKind, FeatureMap, GramReport};
use crate::inference::{log_or_point, wald_from_parts, CurvePoint, DEFAULT_ALPHA};
use crate::simulation::monte_carlo::{write_metrics, write_replicates};
use crate::simulation::{
    comparator_glm, comparator_glm_naive, replicate_seed, run_monte_carlo, simulate_dataset,
    DgpConfig, EstimatorName, McConfig, MissingnessForm, StrainBaselineForm,
};
use crate::tmle::{run_tmle_adjusted, run_tmle_basic, TmleConfig, TmleResult};

/// Environment variable holding the default worker count for `mc`.
pub const WORKERS_ENV: &str = "CASEONLY_VE_WORKERS";

#[derive(Debug, Parser)]
#[command(name = "caseonly-ve", version, about = "Strain-specific vaccine efficacy from case-only data")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Fit an estimator to a case-only CSV.
    Fit(FitArgs),
    /// Draw one dataset from the simulation design.
    Simulate(SimulateArgs),
    /// Run the Monte Carlo study.
    Mc(McArgs),
}

#[derive(Debug, Args)]
pub struct FitArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub input: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub estimator: Option<EstimatorName>,
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long)]
    pub max_iter: Option<usize>,
    /// Seed of the cross-validation fold assignment.
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum MissingnessArg {
    InsideExpit,
    OutsideClamped,
    CompletelyAtRandom,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum StrainBaselineArg {
    Additive,
    Multiplicative,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    /// JSON simulation settings.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub n: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, value_enum)]
    pub missingness: Option<MissingnessArg>,
    #[arg(long, value_enum)]
    pub strain_baseline: Option<StrainBaselineArg>,
}

#[derive(Debug, Args)]
pub struct McArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, env = WORKERS_ENV)]
    pub workers: Option<usize>,
    #[arg(long)]
    pub replicates: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
}

/// An evaluation point of the log odds-ratio curve.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridPoint {
    #[serde(default)]
    pub w: Vec<f64>,
    pub t: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FitConfig {
    #[serde(default)]
    pub input: Option<PathBuf>,
    #[serde(default)]
    pub out: Option<PathBuf>,
    /// Column names; inferred from a `w_*, a, t, wt_*, delta, j` header when
    /// absent.
    #[serde(default)]
    pub columns: Option<ColumnSpec>,
    #[serde(default)]
    pub features: FeatureKind,
    #[serde(default = "default_estimator")]
    pub estimator: EstimatorName,
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    #[serde(default)]
    pub tmle: TmleConfig,
    /// Evaluation grid for `curve.csv`; defaults to 11 times spanning the
    /// observed range at the covariate means.
    #[serde(default)]
    pub curve: Vec<GridPoint>,
}

fn default_estimator() -> EstimatorName {
    EstimatorName::TmleAdjusted
}

fn default_alpha() -> f64 {
    DEFAULT_ALPHA
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            input: None,
            out: None,
            columns: None,
            features: FeatureKind::default(),
            estimator: default_estimator(),
            alpha: default_alpha(),
            tmle: TmleConfig::default(),
            curve: Vec::new(),
        }
    }
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path)?;
    serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
}

fn write_json<T: Serialize>(value: &T, path: &Path) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    std::fs::write(path, text + "\n")?;
    Ok(())
}

/// Fitted coefficients with their estimated sampling covariance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitReport {
    pub estimator: EstimatorName,
    pub n: usize,
    pub converged: bool,
    pub iterations: usize,
    pub alpha: f64,
    pub beta: Vec<f64>,
    pub se: Vec<f64>,
    pub ci_low: Vec<f64>,
    pub ci_high: Vec<f64>,
    pub p_values: Vec<f64>,
    /// Sampling covariance of `beta`.
    pub covariance: Vec<Vec<f64>>,
    /// Influence-function covariance; targeted estimators only.
    pub if_covariance: Option<Vec<Vec<f64>>>,
    pub score_residual: Option<Vec<f64>>,
    pub score_tolerance: Option<Vec<f64>>,
    pub initial_beta: Option<Vec<f64>>,
    pub one_step: Option<Vec<f64>>,
    pub overlap: OverlapReport,
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitDiagnostics {
    pub columns: ColumnSpec,
    pub overlap: OverlapReport,
    pub missing_fraction: f64,
    pub feature_gram: GramReport,
    pub lambda_matrix: Option<Vec<Vec<f64>>>,
    pub lambda_condition: Option<f64>,
    pub epsilon_norms: Option<Vec<f64>>,
    pub warnings: Vec<String>,
}

/// Everything `fit` writes.
#[derive(Debug, Clone, PartialEq)]
pub struct FitOutput {
    pub report: FitReport,
    pub curve: Vec<CurvePoint>,
    pub diagnostics: FitDiagnostics,
}

fn default_grid(ds: &CaseOnlyDataset) -> Vec<GridPoint> {
    let n = ds.n() as f64;
    let means: Vec<f64> = (0..ds.d())
        .map(|k| ds.rows().iter().map(|o| o.w[k]).sum::<f64>() / n)
        .collect();
    let (lo, hi) = ds
        .rows()
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), o| (lo.min(o.t), hi.max(o.t)));
    (0..11)
        .map(|k| GridPoint {
            w: means.clone(),
            t: lo + (hi - lo) * k as f64 / 10.0,
        })
        .collect()
}

/// Runs the configured estimator on a loaded dataset.
pub fn fit_dataset(ds: &CaseOnlyDataset, columns: ColumnSpec, cfg: &FitConfig) -> Result<FitOutput> {
    let map = FeatureMap::new(cfg.features.clone(), ds.d())?;
    let overlap = ds.overlap();
    let fvals: Vec<Vec<f64>> = ds
        .observed_strain_rows()
        .map(|o| map.eval(&o.w, o.t))
        .collect::<Result<_>>()?;
    let feature_gram = gram_report(&fvals);
    let missing_fraction = ds.rows().iter().filter(|o| !o.delta).count() as f64 / ds.n() as f64;

    let tmle = |r: TmleResult| -> Result<(FitReport, FitDiagnostics)> {
        let se = r.standard_errors();
        let inf = wald_from_parts(&r.beta_hat, &se, cfg.alpha)?;
        let n = r.n as f64;
        let covariance = r
            .if_covariance
            .iter()
            .map(|row| row.iter().map(|v| v / n).collect())
            .collect();
        Ok((
            FitReport {
                estimator: cfg.estimator,
                n: r.n,
                converged: r.converged,
                iterations: r.iterations,
                alpha: cfg.alpha,
                beta: inf.beta,
                se: inf.se,
                ci_low: inf.ci_low,
                ci_high: inf.ci_high,
                p_values: inf.p_values,
                covariance,
                if_covariance: Some(r.if_covariance.clone()),
                score_residual: Some(r.score_residual.clone()),
                score_tolerance: Some(r.score_tolerance.clone()),
                initial_beta: Some(r.initial_beta.clone()),
                one_step: Some(r.one_step.clone()),
                overlap: overlap.clone(),
                warnings: r.warnings.clone(),
            },
            FitDiagnostics {
                columns: columns.clone(),
                overlap: overlap.clone(),
                missing_fraction,
                feature_gram,
                lambda_matrix: Some(r.lambda_matrix.clone()),
                lambda_condition: Some(r.lambda_condition),
                epsilon_norms: Some(r.epsilon_norms.clone()),
                warnings: r.warnings,
            },
        ))
    };

    let (report, diagnostics) = match cfg.estimator {
        EstimatorName::TmleBasic => tmle(run_tmle_basic(ds, &map, &cfg.tmle)?)?,
        EstimatorName::TmleAdjusted => tmle(run_tmle_adjusted(ds, &map, &cfg.tmle)?)?,
        EstimatorName::Glm | EstimatorName::GlmNaive => {
            let fit = if cfg.estimator == EstimatorName::Glm {
                comparator_glm(ds, &map)?
            } else {
                comparator_glm_naive(ds, &map)?
            };
            let inf = fit.inference(cfg.alpha)?;
            (
                FitReport {
                    estimator: cfg.estimator,
                    n: ds.n(),
                    converged: true,
                    iterations: 0,
                    alpha: cfg.alpha,
                    beta: inf.beta,
                    se: inf.se,
                    ci_low: inf.ci_low,
                    ci_high: inf.ci_high,
                    p_values: inf.p_values,
                    covariance: fit.covariance,
                    if_covariance: None,
                    score_residual: None,
                    score_tolerance: None,
                    initial_beta: None,
                    one_step: None,
                    overlap: overlap.clone(),
                    warnings: Vec::new(),
                },
                FitDiagnostics {
                    columns,
                    overlap,
                    missing_fraction,
                    feature_gram,
                    lambda_matrix: None,
                    lambda_condition: None,
                    epsilon_norms: None,
                    warnings: Vec::new(),
                },
            )
        }
    };

    let grid = if cfg.curve.is_empty() {
        default_grid(ds)
    } else {
        cfg.curve.clone()
    };
    let curve = grid
        .iter()
        .map(|g| log_or_point(&report.beta, &report.covariance, &map, &g.w, g.t, cfg.alpha))
        .collect::<Result<Vec<_>>>()?;
    Ok(FitOutput {
        report,
        curve,
        diagnostics,
    })
}

fn write_curve(curve: &[CurvePoint], d: usize, path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    let mut header: Vec<String> = (1..=d).map(|k| format!("w_{k}")).collect();
    header.extend(["t", "log_or", "se", "ci_low", "ci_high", "rel_ve"].map(String::from));
    w.write_record(&header)?;
    for p in curve {
        let mut rec: Vec<String> = p.w.iter().map(f64::to_string).collect();
        rec.extend([p.t, p.log_or, p.se, p.ci_low, p.ci_high, p.rel_ve].map(|v| v.to_string()));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

fn cmd_fit(args: FitArgs) -> Result<()> {
    let mut cfg: FitConfig = match &args.config {
        Some(p) => read_json(p)?,
        None => FitConfig::default(),
    };
    if let Some(p) = args.input {
        cfg.input = Some(p);
    }
    if let Some(p) = args.out {
        cfg.out = Some(p);
    }
    if let Some(e) = args.estimator {
        cfg.estimator = e;
    }
    if let Some(a) = args.alpha {
        cfg.alpha = a;
    }
    if let Some(m) = args.max_iter {
        cfg.tmle.max_iter = m;
    }
    if let Some(s) = args.seed {
        cfg.tmle.penalty.seed = s;
    }
    if !(cfg.alpha > 0.0 && cfg.alpha < 1.0) {
        return Err(Error::Config("alpha must lie in (0, 1)".into()));
    }
    let input = cfg.input.clone().ok_or_else(|| Error::Config("no input file given".into()))?;
    let out = cfg.out.clone().ok_or_else(|| Error::Config("no output directory given".into()))?;

    let columns = match &cfg.columns {
        Some(c) => c.clone(),
        None => {
            let mut reader = csv::Reader::from_path(&input)?;
            let header = reader.headers()?.clone();
            ColumnSpec::infer(&header.iter().map(str::trim).collect::<Vec<_>>())
        }
    };
    let ds = load_csv(&input, &columns)?;
    let output = fit_dataset(&ds, columns, &cfg)?;

    std::fs::create_dir_all(&out)?;
    write_json(&output.report, &out.join("report.json"))?;
    write_json(&output.diagnostics, &out.join("diagnostics.json"))?;
    write_curve(&output.curve, ds.d(), &out.join("curve.csv"))?;
    for w in &output.report.warnings {
        eprintln!("warning: {w}");
    }
    if !output.report.converged {
        return Err(Error::NotConverged {
            iterations: output.report.iterations,
        });
    }
    Ok(())
}

fn cmd_simulate(args: SimulateArgs) -> Result<()> {
    let mut dgp: DgpConfig = match &args.config {
        Some(p) => read_json(p)?,
        None => DgpConfig::default(),
    };
    if let Some(m) = args.missingness {
        dgp.missingness = match m {
            MissingnessArg::InsideExpit => MissingnessForm::InsideExpit,
            MissingnessArg::OutsideClamped => MissingnessForm::OutsideClamped,
            MissingnessArg::CompletelyAtRandom => MissingnessForm::CompletelyAtRandom,
        };
    }
    if let Some(s) = args.strain_baseline {
        dgp.strain_baseline = match s {
            StrainBaselineArg::Additive => StrainBaselineForm::Additive,
            StrainBaselineArg::Multiplicative => StrainBaselineForm::Multiplicative,
        };
    }
    let sim = simulate_dataset(args.n, args.seed, &dgp)?;
    write_csv(&sim.dataset, &args.out, &ColumnSpec::standard(2, 1))?;
    eprintln!(
        "wrote {} cases; strain missing for {:.3}; {} redrawn individuals",
        args.n,
        sim.missing_fraction(),
        sim.inversion_failures
    );
    Ok(())
}

#[derive(Debug, Serialize)]
struct ExclusionCount {
    estimator: EstimatorName,
    n: usize,
    coef: usize,
    excluded: usize,
    degenerate: bool,
}

#[derive(Debug, Serialize)]
struct McSummary<'a> {
    config: &'a McConfig,
    workers: Option<usize>,
    replicate_seeds: Vec<u64>,
    exclusions: Vec<ExclusionCount>,
    inversion_failures: &'a std::collections::BTreeMap<usize, usize>,
    missing_fraction: &'a std::collections::BTreeMap<usize, f64>,
    wall_time_secs: f64,
}

fn cmd_mc(args: McArgs) -> Result<()> {
    let mut cfg: McConfig = match &args.config {
        Some(p) => read_json(p)?,
        None => McConfig::default(),
    };
    if let Some(r) = args.replicates {
        cfg.replicates = r;
    }
    if let Some(s) = args.seed {
        cfg.master_seed = s;
    }
    cfg.validate()?;
    let start = Instant::now();
    let out = run_monte_carlo(&cfg, args.workers)?;
    let wall = start.elapsed().as_secs_f64();

    std::fs::create_dir_all(&args.out)?;
    write_metrics(&out.metrics, &args.out.join("metrics.csv"))?;
    write_replicates(&out.replicates, &args.out.join("replicates.csv"))?;
    let summary = McSummary {
        config: &cfg,
        workers: args.workers,
        replicate_seeds: (0..cfg.replicates as u64).map(|r| replicate_seed(cfg.master_seed, r)).collect(),
        exclusions: out
            .metrics
            .iter()
            .map(|m| ExclusionCount {
                estimator: m.estimator,
                n: m.n,
                coef: m.coef,
                excluded: m.excluded,
                degenerate: m.degenerate,
            })
            .collect(),
        inversion_failures: &out.inversion_failures,
        missing_fraction: &out.missing_fraction,
        wall_time_secs: wall,
    };
    write_json(&summary, &args.out.join("summary.json"))?;
    Ok(())
}

/// Runs a parsed command line.
pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Fit(a) => cmd_fit(a),
        Command::Simulate(a) => cmd_simulate(a),
        Command::Mc(a) => cmd_mc(a),
    }
}
