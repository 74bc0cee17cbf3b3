//! Targeted estimator of `beta` when strain missingness depends on baseline
//! covariates, vaccination and infection time only.
//!
//! The clever covariate uses `pi_tilde` (vaccination probability among
//! strain-observed cases), which is fit once and frozen; only `mu` is
//! fluctuated. Each step is an unpenalized logistic regression of `J` on the
//! `s` columns `f(w, t) H(a, w, t)` with offset `logit mu`, over the
//! strain-observed cases.

use log::warn;
use nalgebra::DMatrix;

use super::{
    column_means, empirical_covariance, invert_scaling, matvec, scaling_weight, score_solved,
    score_tolerance, to_rows, EstimatorKind, PointState, TargetedFit, TmleConfig, TmleResult,
};
use crate::data::CaseOnlyDataset;
use crate::error::{Error, Result};
use crate::features::FeatureMap;
use crate::nuisance::{fit_pi_tilde, FittedProbability};
use crate::plogit::{
    expit, fit_glm, fit_partially_linear, log1pexp, Design, NewtonOptions, PartiallyLinearFit,
};

#[derive(Debug, Clone)]
struct RowCache {
    f: Vec<f64>,
    p: f64,
    a: bool,
    delta: bool,
    j: f64,
    state: PointState,
}

/// Iterate of the basic targeting loop.
#[derive(Debug, Clone)]
pub struct TmleBasicState {
    pub fit: TargetedFit,
    rows: Vec<RowCache>,
    pub iter: usize,
}

/// Scaling matrix, influence function and score at one iterate.
#[derive(Debug, Clone)]
pub struct BasicEvaluation {
    pub lambda: DMatrix<f64>,
    pub lambda_condition: f64,
    /// `(1/n) sum delta f H (j - mu)`, before scaling by `Lambda`.
    pub raw_score: Vec<f64>,
    pub influence: Vec<Vec<f64>>,
    /// `P_n D`.
    pub score: Vec<f64>,
    pub covariance: DMatrix<f64>,
}

impl TmleBasicState {
    pub fn new(ds: &CaseOnlyDataset, initial: PartiallyLinearFit, pi_tilde: FittedProbability) -> Result<Self> {
        let fit = TargetedFit::new(initial, pi_tilde);
        let rows = ds
            .rows()
            .iter()
            .map(|o| {
                let (state, f, p) = fit.base_state(&o.w, o.t)?;
                Ok(RowCache {
                    f,
                    p,
                    a: o.a,
                    delta: o.delta,
                    j: o.j_f64(),
                    state,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { fit, rows, iter: 0 })
    }

    pub fn beta(&self) -> Vec<f64> {
        self.fit.beta()
    }

    /// In-sample `mu(a_i, w_i, t_i)`.
    pub fn fitted(&self) -> Vec<f64> {
        self.rows
            .iter()
            .map(|r| expit(r.state.logit(r.a, &r.f)))
            .collect()
    }

    /// `(1/n) sum_i delta_i [j_i log mu_i + (1 - j_i) log(1 - mu_i)]`.
    pub fn working_log_likelihood(&self) -> f64 {
        let n = self.rows.len() as f64;
        self.rows
            .iter()
            .filter(|r| r.delta)
            .map(|r| {
                let eta = r.state.logit(r.a, &r.f);
                r.j * eta - log1pexp(eta)
            })
            .sum::<f64>()
            / n
    }

    pub fn evaluate(&self) -> Result<BasicEvaluation> {
        let n = self.rows.len();
        let s = self.fit.initial.beta.len();
        let mut inv = DMatrix::zeros(s, s);
        let mut raw = vec![0.0; s];
        let mut terms = Vec::with_capacity(n);
        for r in &self.rows {
            let c = r.state.clever(&r.f, r.p)?;
            let h = c.at(r.a);
            let resid = if r.delta {
                r.j - expit(r.state.logit(r.a, &r.f))
            } else {
                0.0
            };
            if r.delta {
                let wgt = scaling_weight(r.p, c.s1, c.s0) / n as f64;
                for a in 0..s {
                    raw[a] += r.f[a] * h * resid / n as f64;
                    for b in 0..s {
                        inv[(a, b)] += r.f[a] * r.f[b] * wgt;
                    }
                }
            }
            terms.push(h * resid);
        }
        let (lambda, lambda_condition) = invert_scaling(&inv)?;
        let influence: Vec<Vec<f64>> = self
            .rows
            .iter()
            .zip(&terms)
            .map(|(r, &t)| matvec(&lambda, &r.f).into_iter().map(|v| v * t).collect())
            .collect();
        let score = column_means(&influence);
        let covariance = empirical_covariance(&influence);
        Ok(BasicEvaluation {
            lambda,
            lambda_condition,
            raw_score: raw,
            influence,
            score,
            covariance,
        })
    }

    /// One fluctuation: fits `eps` by maximum likelihood along the submodel
    /// and moves every row (and the evaluable fit) to `mu(eps)`.
    pub fn step(&mut self) -> Result<Vec<f64>> {
        let s = self.fit.initial.beta.len();
        let mut cols = Vec::new();
        let mut y = Vec::new();
        let mut offset = Vec::new();
        let mut cleverness = Vec::with_capacity(self.rows.len());
        for r in &self.rows {
            let c = r.state.clever(&r.f, r.p)?;
            if r.delta {
                let h = c.at(r.a);
                cols.push(r.f.iter().map(|v| v * h).collect::<Vec<f64>>());
                y.push(r.j);
                offset.push(r.state.logit(r.a, &r.f));
            }
            cleverness.push(c);
        }
        let weights = vec![1.0; y.len()];
        let glm = fit_glm(&Design::from_rows(&cols), &y, &weights, &offset, NewtonOptions::default())?;
        let eps = glm.coef;
        debug_assert_eq!(eps.len(), s);
        for (r, c) in self.rows.iter_mut().zip(&cleverness) {
            r.state.advance(&r.f, c.h0, &eps);
        }
        self.fit.steps.push(eps.clone());
        self.iter += 1;
        Ok(eps)
    }
}

/// `Lambda` at a (possibly targeted) fit, averaged over all case rows with the
/// `delta` factor inside the sum.
pub fn scaling_matrix_basic(ds: &CaseOnlyDataset, fit: &TargetedFit) -> Result<DMatrix<f64>> {
    let n = ds.n() as f64;
    let s = fit.initial.beta.len();
    let mut inv = DMatrix::zeros(s, s);
    for o in ds.rows().iter().filter(|o| o.delta) {
        let (state, _, f, p) = fit.replay(&o.w, o.t)?;
        let c = state.clever(&f, p)?;
        let wgt = scaling_weight(p, c.s1, c.s0) / n;
        for a in 0..s {
            for b in 0..s {
                inv[(a, b)] += f[a] * f[b] * wgt;
            }
        }
    }
    Ok(invert_scaling(&inv)?.0)
}

/// Efficient influence function `(Lambda f) delta H (j - mu)` at one case.
pub fn eif_basic(
    obs: &crate::data::Observation,
    fit: &TargetedFit,
    lambda: &DMatrix<f64>,
) -> Result<Vec<f64>> {
    let (state, _, f, p) = fit.replay(&obs.w, obs.t)?;
    if !obs.delta {
        return Ok(vec![0.0; f.len()]);
    }
    let c = state.clever(&f, p)?;
    let t = c.at(obs.a) * (obs.j_f64() - expit(state.logit(obs.a, &f)));
    Ok(matvec(lambda, &f).into_iter().map(|v| v * t).collect())
}

fn check_arms(ds: &CaseOnlyDataset) -> Result<()> {
    if !ds.overlap().basic_estimable() {
        return Err(Error::DegenerateArm);
    }
    Ok(())
}

/// Runs the basic targeted estimator from a fresh initial fit.
pub fn run_tmle_basic(ds: &CaseOnlyDataset, map: &FeatureMap, cfg: &TmleConfig) -> Result<TmleResult> {
    check_arms(ds)?;
    let initial = fit_partially_linear(ds, map, &cfg.basis, &cfg.penalty, &cfg.solver)?;
    let pi_tilde = fit_pi_tilde(ds, &cfg.nuisance())?;
    let state = TmleBasicState::new(ds, initial, pi_tilde)?;
    target_basic(state, cfg.max_iter)
}

/// Iterates fluctuations from `state` until the score equation is solved to
/// `sigma_j / (sqrt(n) log n)` or `max_iter` steps were taken.
pub fn target_basic(mut state: TmleBasicState, max_iter: usize) -> Result<TmleResult> {
    let n = state.rows.len();
    let initial_beta = state.beta();
    let mut eval = state.evaluate()?;
    let one_step: Vec<f64> = initial_beta
        .iter()
        .zip(&eval.score)
        .map(|(b, d)| b + d)
        .collect();
    let mut epsilon_norms = Vec::new();
    let mut tolerance = score_tolerance(&eval.covariance, n);
    let mut converged = score_solved(&eval.score, &tolerance);
    while !converged && state.iter < max_iter {
        let eps = state.step()?;
        epsilon_norms.push(eps.iter().fold(0.0f64, |m, e| m.max(e.abs())));
        eval = state.evaluate()?;
        tolerance = score_tolerance(&eval.covariance, n);
        converged = score_solved(&eval.score, &tolerance);
    }
    let mut warnings = Vec::new();
    if !converged {
        let msg = format!("score equation not solved after {} iterations", state.iter);
        warn!("{msg}");
        warnings.push(msg);
    }
    if state.rows.iter().any(|r| r.p <= crate::plogit::PROB_FLOOR || r.p >= 1.0 - crate::plogit::PROB_FLOOR) {
        warnings.push("vaccination propensity reached the truncation bound".into());
    }
    Ok(TmleResult {
        estimator: EstimatorKind::TmleBasic,
        n,
        beta_hat: state.beta(),
        initial_beta,
        one_step,
        if_covariance: to_rows(&eval.covariance),
        score_residual: eval.score,
        score_tolerance: tolerance,
        iterations: state.iter,
        converged,
        lambda_matrix: to_rows(&eval.lambda),
        lambda_condition: eval.lambda_condition,
        epsilon_norms,
        warnings,
        influence: eval.influence,
    })
}
