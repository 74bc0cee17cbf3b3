//! Conditional-probability nuisances used by the targeted estimators:
//!
//! * `pi_tilde(w, t) = P(A = 1 | Delta = 1, W = w, T = t)`
//! * `pi(w, t) = P(A = 1 | W = w, T = t)`
//! * `big_pi(x) = P(Delta = 1 | W_T, T, A, W)`
//! * `mu_bar(x) = P(J = 1 | Delta = 1, W_T, T, A, W)`
//!
//! Each is an L1-penalized logistic regression over a spline basis with knots
//! placed on the rows the regression is fit on. `mu_bar` carries no
//! partially linear constraint.

use serde::{Deserialize, Serialize};

use crate::data::{CaseOnlyDataset, Observation};
use crate::error::{Error, Result};
use crate::features::{Basis, BasisSpec};
use crate::plogit::{
    clip_prob, expit, fit_logistic, CvSummary, Design, LogisticProblem, PenaltyConfig,
    SolverOptions,
};

/// Which covariates a nuisance regression conditions on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NuisanceInput {
    /// `(w, t)`.
    Baseline,
    /// `(w_post, t, a, w)`.
    Full,
}

impl NuisanceInput {
    pub fn of(self, o: &Observation) -> Vec<f64> {
        match self {
            NuisanceInput::Baseline => o.wt_input(),
            NuisanceInput::Full => o.full_input(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
enum Model {
    Logistic { basis: Basis, coef: Vec<f64> },
    Constant(f64),
}

/// A fitted conditional probability; evaluations are clipped to
/// `[1e-4, 1 - 1e-4]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FittedProbability {
    input: NuisanceInput,
    model: Model,
    pub lambda: f64,
    pub cv: Option<CvSummary>,
}

impl FittedProbability {
    pub fn constant(input: NuisanceInput, p: f64) -> Self {
        Self {
            input,
            model: Model::Constant(p),
            lambda: 0.0,
            cv: None,
        }
    }

    pub fn input(&self) -> NuisanceInput {
        self.input
    }

    /// Unclipped linear-predictor probability at an already assembled input.
    pub fn raw_at(&self, x: &[f64]) -> Result<f64> {
        match &self.model {
            Model::Constant(p) => Ok(*p),
            Model::Logistic { basis, coef } => {
                let b = basis.eval(x)?;
                Ok(expit(b.iter().zip(coef).map(|(x, c)| x * c).sum()))
            }
        }
    }

    pub fn eval_at(&self, x: &[f64]) -> Result<f64> {
        Ok(clip_prob(self.raw_at(x)?))
    }

    pub fn eval(&self, o: &Observation) -> Result<f64> {
        self.eval_at(&self.input.of(o))
    }

    pub fn eval_all(&self, ds: &CaseOnlyDataset) -> Result<Vec<f64>> {
        ds.rows().iter().map(|o| self.eval(o)).collect()
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NuisanceConfig {
    #[serde(default)]
    pub basis: BasisSpec,
    #[serde(default)]
    pub penalty: PenaltyConfig,
    #[serde(default)]
    pub solver: SolverOptions,
}

fn fit_binary<'a>(
    rows: impl Iterator<Item = &'a Observation> + Clone,
    input: NuisanceInput,
    outcome: impl Fn(&Observation) -> f64,
    cfg: &NuisanceConfig,
) -> Result<FittedProbability> {
    let inputs: Vec<Vec<f64>> = rows.clone().map(|o| input.of(o)).collect();
    let y: Vec<f64> = rows.map(outcome).collect();
    let basis = Basis::from_data(&cfg.basis, &inputs)?;
    let design = Design::from_rows(
        &inputs
            .iter()
            .map(|x| basis.eval(x))
            .collect::<Result<Vec<_>>>()?,
    );
    let n = y.len();
    let weights = vec![1.0; n];
    let offset = vec![0.0; n];
    let penalized: Vec<bool> = (0..basis.dim()).map(|k| k > 0).collect();
    let fit = fit_logistic(
        &LogisticProblem {
            x: &design,
            y: &y,
            weights: &weights,
            offset: &offset,
            penalized: &penalized,
        },
        &cfg.penalty,
        &cfg.solver,
    )?;
    Ok(FittedProbability {
        input,
        model: Model::Logistic {
            basis,
            coef: fit.coef,
        },
        lambda: fit.lambda,
        cv: fit.cv,
    })
}

fn varies<'a>(mut values: impl Iterator<Item = &'a Observation>, f: impl Fn(&Observation) -> bool) -> bool {
    match values.next() {
        None => false,
        Some(first) => {
            let v0 = f(first);
            values.any(|o| f(o) != v0)
        }
    }
}

/// Vaccination probability among strain-observed cases.
pub fn fit_pi_tilde(ds: &CaseOnlyDataset, cfg: &NuisanceConfig) -> Result<FittedProbability> {
    if !varies(ds.observed_strain_rows(), |o| o.a) {
        return Err(Error::DegenerateArm);
    }
    fit_binary(ds.observed_strain_rows(), NuisanceInput::Baseline, Observation::a_f64, cfg)
}

/// Vaccination probability among all cases.
pub fn fit_pi(ds: &CaseOnlyDataset, cfg: &NuisanceConfig) -> Result<FittedProbability> {
    if !varies(ds.rows().iter(), |o| o.a) {
        return Err(Error::DegenerateArm);
    }
    fit_binary(ds.rows().iter(), NuisanceInput::Baseline, Observation::a_f64, cfg)
}

/// Probability that the strain is observed.
pub fn fit_big_pi(ds: &CaseOnlyDataset, cfg: &NuisanceConfig) -> Result<FittedProbability> {
    if !varies(ds.rows().iter(), |o| o.delta) {
        return Err(Error::DegenerateMissingness);
    }
    fit_binary(ds.rows().iter(), NuisanceInput::Full, Observation::delta_f64, cfg)
}

/// Strain probability among strain-observed cases given all covariates.
pub fn fit_mu_bar(ds: &CaseOnlyDataset, cfg: &NuisanceConfig) -> Result<FittedProbability> {
    if !varies(ds.observed_strain_rows(), |o| o.j == Some(true)) {
        return Err(Error::DegenerateStrain);
    }
    fit_binary(ds.observed_strain_rows(), NuisanceInput::Full, Observation::j_f64, cfg)
}

/// Positivity summary for the missingness model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MissingnessDiagnostics {
    pub min_big_pi: f64,
    pub mean_big_pi: f64,
    /// Raised when the smallest in-sample fitted value falls below 0.05.
    pub positivity_warning: bool,
}

pub const POSITIVITY_WARNING_LEVEL: f64 = 0.05;

pub fn missingness_diagnostics(values: &[f64]) -> MissingnessDiagnostics {
    let min = values.iter().cloned().fold(f64::INFINITY, f64::min);
    let mean = values.iter().sum::<f64>() / values.len().max(1) as f64;
    MissingnessDiagnostics {
        min_big_pi: min,
        mean_big_pi: mean,
        positivity_warning: min < POSITIVITY_WARNING_LEVEL,
    }
}

/// The four fitted nuisances.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NuisanceSet {
    pub pi_tilde: FittedProbability,
    pub pi: FittedProbability,
    pub big_pi: FittedProbability,
    pub mu_bar: FittedProbability,
}

impl NuisanceSet {
    pub fn fit(ds: &CaseOnlyDataset, cfg: &NuisanceConfig) -> Result<Self> {
        Ok(Self {
            pi_tilde: fit_pi_tilde(ds, cfg)?,
            pi: fit_pi(ds, cfg)?,
            big_pi: fit_big_pi(ds, cfg)?,
            mu_bar: fit_mu_bar(ds, cfg)?,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn obs(w: f64, a: bool, delta: bool, j: Option<bool>) -> Observation {
        Observation::new(0, vec![w], a, 1.0 + w.abs(), vec![w * 0.5], delta, j).unwrap()
    }

    #[test]
    fn constant_treatment_is_degenerate() {
        let rows: Vec<Observation> = (0..20)
            .map(|i| obs(i as f64 / 20.0, true, true, Some(i % 2 == 0)))
            .collect();
        let ds = CaseOnlyDataset::new(rows).unwrap();
        assert!(matches!(fit_pi_tilde(&ds, &NuisanceConfig::default()), Err(Error::DegenerateArm)));
        assert!(matches!(fit_pi(&ds, &NuisanceConfig::default()), Err(Error::DegenerateArm)));
        assert!(matches!(
            fit_big_pi(&ds, &NuisanceConfig::default()),
            Err(Error::DegenerateMissingness)
        ));
    }

    #[test]
    fn constant_strain_is_degenerate() {
        let rows: Vec<Observation> = (0..20)
            .map(|i| obs(i as f64 / 20.0, i % 2 == 0, i % 3 != 0, (i % 3 != 0).then_some(true)))
            .collect();
        let ds = CaseOnlyDataset::new(rows).unwrap();
        assert!(matches!(fit_mu_bar(&ds, &NuisanceConfig::default()), Err(Error::DegenerateStrain)));
    }

    #[test]
    fn clipping_rule() {
        let near_one = FittedProbability::constant(NuisanceInput::Baseline, 1.0 - 1e-9);
        assert_eq!(near_one.eval_at(&[0.0, 1.0]).unwrap(), 1.0 - 1e-4);
        let near_zero = FittedProbability::constant(NuisanceInput::Baseline, 1e-12);
        assert_eq!(near_zero.eval_at(&[0.0, 1.0]).unwrap(), 1e-4);
    }

    #[test]
    fn positivity_warning_threshold() {
        assert!(missingness_diagnostics(&[0.04, 0.5]).positivity_warning);
        assert!(!missingness_diagnostics(&[0.06, 0.5]).positivity_warning);
    }
}
