//! Targeted maximum likelihood estimators of the log odds-ratio coefficients.
//!
//! Both estimators start from a partially linear fit
//! `logit mu(a, w, t) = a beta' f(w, t) + h(w, t)` and repeatedly fluctuate it
//! along the least-favorable direction `eps' f(w, t) H(a, w, t)`. Because
//! `H(1) - H(0) = 1`, a fluctuation moves `beta` to `beta + eps` and
//! `h` to `h + eps' f H(0)`, so every iterate stays partially linear.

pub mod adjusted;
pub mod basic;

use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::BasisSpec;
use crate::nuisance::{FittedProbability, NuisanceConfig};
use crate::plogit::{expit, PartiallyLinearFit, PenaltyConfig, SolverOptions};

pub use adjusted::{run_tmle_adjusted, AdjustedFit};
pub use basic::run_tmle_basic;

/// `a - p s1 / (p s1 + (1 - p) s0)`: the treatment indicator residualized by
/// its variance-weighted conditional mean.
pub fn clever_covariate(a: bool, s1: f64, s0: f64, p: f64) -> Result<f64> {
    let denom = p * s1 + (1.0 - p) * s0;
    if !(denom > 0.0) {
        return Err(Error::DegenerateVariance);
    }
    Ok(if a { 1.0 } else { 0.0 } - p * s1 / denom)
}

/// Per-observation weight of the inverse scaling matrix,
/// `(1 - p) p s1 s0 / ((1 - p) s0 + p s1)`.
pub fn scaling_weight(p: f64, s1: f64, s0: f64) -> f64 {
    let denom = (1.0 - p) * s0 + p * s1;
    if denom > 0.0 {
        (1.0 - p) * p * s1 * s0 / denom
    } else {
        0.0
    }
}

/// Inverts an accumulated `Lambda^-1`; returns the matrix and the condition
/// number of its inverse.
pub fn invert_scaling(inv: &DMatrix<f64>) -> Result<(DMatrix<f64>, f64)> {
    let eig = SymmetricEigen::new(inv.clone());
    let (lo, hi) = (eig.eigenvalues.min(), eig.eigenvalues.max());
    let condition = if lo > 0.0 { hi / lo } else { f64::INFINITY };
    if !(lo > 0.0) || condition > 1e14 {
        return Err(Error::SingularMatrix { condition });
    }
    let m = inv
        .clone()
        .try_inverse()
        .ok_or(Error::SingularMatrix { condition })?;
    Ok((m, condition))
}

/// `(1/n) sum_i D_i D_i'`.
pub fn empirical_covariance(influence: &[Vec<f64>]) -> DMatrix<f64> {
    let s = influence.first().map_or(0, Vec::len);
    let n = influence.len().max(1) as f64;
    let mut c = DMatrix::zeros(s, s);
    for d in influence {
        for a in 0..s {
            for b in 0..s {
                c[(a, b)] += d[a] * d[b] / n;
            }
        }
    }
    c
}

pub fn column_means(rows: &[Vec<f64>]) -> Vec<f64> {
    let s = rows.first().map_or(0, Vec::len);
    let n = rows.len().max(1) as f64;
    let mut m = vec![0.0; s];
    for r in rows {
        for (acc, v) in m.iter_mut().zip(r) {
            *acc += v / n;
        }
    }
    m
}

/// Threshold `sigma_j / (sqrt(n) log n)` of the stopping rule for each
/// coordinate, with `sigma_j` the influence-function standard deviation.
pub fn score_tolerance(cov: &DMatrix<f64>, n: usize) -> Vec<f64> {
    let nf = n as f64;
    let scale = if n > 1 { nf.sqrt() * nf.ln() } else { 1.0 };
    (0..cov.nrows())
        .map(|j| cov[(j, j)].max(0.0).sqrt() / scale)
        .collect()
}

pub fn score_solved(score: &[f64], tolerance: &[f64]) -> bool {
    score.iter().zip(tolerance).all(|(s, t)| s.abs() <= *t)
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn matvec(m: &DMatrix<f64>, v: &[f64]) -> Vec<f64> {
    (0..m.nrows())
        .map(|r| (0..m.ncols()).map(|c| m[(r, c)] * v[c]).sum())
        .collect()
}

fn to_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows())
        .map(|r| (0..m.ncols()).map(|c| m[(r, c)]).collect())
        .collect()
}

/// Partially linear state at one `(w, t)`: `h` and the structural `beta`.
#[derive(Debug, Clone, PartialEq)]
pub struct PointState {
    pub h: f64,
    pub beta: Vec<f64>,
}

/// Variances and clever covariates of a partially linear state at one point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CleverTerms {
    pub s0: f64,
    pub s1: f64,
    pub h0: f64,
    pub h1: f64,
}

impl CleverTerms {
    pub fn at(&self, a: bool) -> f64 {
        if a {
            self.h1
        } else {
            self.h0
        }
    }
}

impl PointState {
    pub fn logit(&self, a: bool, f: &[f64]) -> f64 {
        if a {
            self.h + dot(&self.beta, f)
        } else {
            self.h
        }
    }

    pub fn clever(&self, f: &[f64], p: f64) -> Result<CleverTerms> {
        let m0 = expit(self.logit(false, f));
        let m1 = expit(self.logit(true, f));
        let (s0, s1) = (m0 * (1.0 - m0), m1 * (1.0 - m1));
        Ok(CleverTerms {
            s0,
            s1,
            h0: clever_covariate(false, s1, s0, p)?,
            h1: clever_covariate(true, s1, s0, p)?,
        })
    }

    /// Moves along the logistic fluctuation submodel by `eps`.
    pub fn advance(&mut self, f: &[f64], clever_h0: f64, eps: &[f64]) {
        self.h += dot(eps, f) * clever_h0;
        for (b, e) in self.beta.iter_mut().zip(eps) {
            *b += e;
        }
    }
}

/// An initial partially linear fit together with the sequence of
/// fluctuations applied to it. Evaluable at any `(a, w, t)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TargetedFit {
    pub initial: PartiallyLinearFit,
    /// Propensity defining the clever covariate (`pi_tilde` or `pi`).
    pub propensity: FittedProbability,
    pub steps: Vec<Vec<f64>>,
}

impl TargetedFit {
    pub fn new(initial: PartiallyLinearFit, propensity: FittedProbability) -> Self {
        Self {
            initial,
            propensity,
            steps: Vec::new(),
        }
    }

    pub fn beta(&self) -> Vec<f64> {
        let mut beta = self.initial.beta.clone();
        for eps in &self.steps {
            for (b, e) in beta.iter_mut().zip(eps) {
                *b += e;
            }
        }
        beta
    }

    pub(crate) fn base_state(&self, w: &[f64], t: f64) -> Result<(PointState, Vec<f64>, f64)> {
        let f = self.initial.map.eval(w, t)?;
        let mut x = w.to_vec();
        x.push(t);
        let p = self.propensity.eval_at(&x)?;
        let state = PointState {
            h: self.initial.h(w, t)?,
            beta: self.initial.beta.clone(),
        };
        Ok((state, f, p))
    }

    /// Replays the fluctuations at `(w, t)`; returns the final state and the
    /// clever terms in force before each step.
    pub fn replay(&self, w: &[f64], t: f64) -> Result<(PointState, Vec<CleverTerms>, Vec<f64>, f64)> {
        let (mut state, f, p) = self.base_state(w, t)?;
        let mut history = Vec::with_capacity(self.steps.len());
        for eps in &self.steps {
            let c = state.clever(&f, p)?;
            state.advance(&f, c.h0, eps);
            history.push(c);
        }
        Ok((state, history, f, p))
    }

    pub fn logit_mu(&self, a: bool, w: &[f64], t: f64) -> Result<f64> {
        let (state, _, f, _) = self.replay(w, t)?;
        Ok(state.logit(a, &f))
    }

    pub fn mu(&self, a: bool, w: &[f64], t: f64) -> Result<f64> {
        Ok(expit(self.logit_mu(a, w, t)?))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EstimatorKind {
    TmleBasic,
    TmleAdjusted,
}

/// Settings shared by both targeted estimators.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TmleConfig {
    #[serde(default = "default_max_iter")]
    pub max_iter: usize,
    /// Basis family for the outcome regression and every nuisance.
    #[serde(default)]
    pub basis: BasisSpec,
    #[serde(default)]
    pub penalty: PenaltyConfig,
    #[serde(default)]
    pub solver: SolverOptions,
    /// Replaces the fitted strain regression given all covariates with a
    /// constant, e.g. to probe robustness to its misspecification.
    #[serde(default)]
    pub mu_bar_constant: Option<f64>,
}

fn default_max_iter() -> usize {
    100
}

impl Default for TmleConfig {
    fn default() -> Self {
        Self {
            max_iter: default_max_iter(),
            basis: BasisSpec::default(),
            penalty: PenaltyConfig::default(),
            solver: SolverOptions::default(),
            mu_bar_constant: None,
        }
    }
}

impl TmleConfig {
    pub fn nuisance(&self) -> NuisanceConfig {
        NuisanceConfig {
            basis: self.basis.clone(),
            penalty: self.penalty.clone(),
            solver: self.solver,
        }
    }
}

/// Output of either targeted estimator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TmleResult {
    pub estimator: EstimatorKind,
    pub n: usize,
    pub beta_hat: Vec<f64>,
    pub initial_beta: Vec<f64>,
    /// `beta_initial + P_n D` at the initial fit.
    pub one_step: Vec<f64>,
    /// `(1/n) sum_i D_i D_i'` at the targeted fit.
    pub if_covariance: Vec<Vec<f64>>,
    /// `P_n D` at the targeted fit.
    pub score_residual: Vec<f64>,
    pub score_tolerance: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
    pub lambda_matrix: Vec<Vec<f64>>,
    pub lambda_condition: f64,
    /// Max-norm of each fluctuation step.
    pub epsilon_norms: Vec<f64>,
    pub warnings: Vec<String>,
    /// Per-observation influence function at the targeted fit, `n x s`.
    #[serde(skip)]
    pub influence: Vec<Vec<f64>>,
}

/// Alias kept for the adjusted estimator's output.
pub type TmleAdjResult = TmleResult;

impl TmleResult {
    pub fn covariance_matrix(&self) -> DMatrix<f64> {
        let s = self.beta_hat.len();
        DMatrix::from_fn(s, s, |r, c| self.if_covariance[r][c])
    }

    pub fn standard_errors(&self) -> Vec<f64> {
        let n = self.n as f64;
        (0..self.beta_hat.len())
            .map(|j| (self.if_covariance[j][j] / n).sqrt())
            .collect()
    }
}
