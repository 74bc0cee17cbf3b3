//! Targeted estimator of `beta_adj` when strain missingness may also depend
//! on post-vaccination covariates `W_T`.
//!
//! Two fits are fluctuated along the shared columns `f(w, t) H_adj(a, w, t)`:
//! `mu_bar(w_post, t, a, w)` through an IPW-weighted likelihood over the
//! strain-observed cases, and the partially linear `mu_adj(a, w, t)` through a
//! fractional-outcome likelihood with `mu_bar` as pseudo-outcome over all
//! cases. `beta_adj` is read off `mu_adj`.

use log::warn;
use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::{
    column_means, empirical_covariance, invert_scaling, matvec, scaling_weight, score_solved,
    score_tolerance, to_rows, CleverTerms, EstimatorKind, PointState, TargetedFit, TmleConfig,
    TmleResult,
};
use crate::data::{CaseOnlyDataset, Observation};
use crate::error::{Error, Result};
use crate::features::FeatureMap;
use crate::nuisance::{
    fit_big_pi, fit_mu_bar, fit_pi, missingness_diagnostics, FittedProbability, NuisanceInput,
};
use crate::plogit::{
    expit, fit_glm, fit_partially_linear, fit_sequential, logit, Design, NewtonOptions,
    PartiallyLinearFit, PROB_FLOOR,
};

/// Initial strain regression given all covariates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MuBarModel {
    /// Penalized logistic fit on `(w_post, t, a, w)`.
    Fitted(FittedProbability),
    /// Without post-vaccination covariates `mu_bar` is itself partially
    /// linear in `a`; the outcome-regression fit is used directly.
    Structural(PartiallyLinearFit),
}

impl MuBarModel {
    fn logit_at(&self, o: &Observation) -> Result<f64> {
        match self {
            MuBarModel::Fitted(p) => Ok(logit(p.eval(o)?)),
            MuBarModel::Structural(fit) => fit.logit_mu(o.a, &o.w, o.t),
        }
    }
}

/// Missingness model; `None` when every strain is observed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdjustedFit {
    pub mu_adj: TargetedFit,
    pub mu_bar: MuBarModel,
    pub big_pi: Option<FittedProbability>,
    /// Fluctuations applied to `mu_bar`.
    pub mu_bar_steps: Vec<Vec<f64>>,
}

impl AdjustedFit {
    pub fn beta(&self) -> Vec<f64> {
        self.mu_adj.beta()
    }

    pub fn big_pi_at(&self, o: &Observation) -> Result<f64> {
        match &self.big_pi {
            Some(p) => p.eval(o),
            None => Ok(1.0),
        }
    }

    /// Targeted `logit mu_bar` at an observation, replaying both
    /// fluctuation sequences.
    pub fn mu_bar_logit(&self, o: &Observation) -> Result<f64> {
        let (_, history, f, _) = self.mu_adj.replay(&o.w, o.t)?;
        let mut eta = self.mu_bar.logit_at(o)?;
        for (c, eps) in history.iter().zip(&self.mu_bar_steps) {
            eta += c.at(o.a) * super::dot(eps, &f);
        }
        Ok(eta)
    }
}

#[derive(Debug, Clone)]
struct RowCache {
    f: Vec<f64>,
    p: f64,
    big_pi: f64,
    a: bool,
    delta: bool,
    j: f64,
    mu_bar_logit: f64,
    state: PointState,
}

/// Iterate of the adjusted targeting loop.
#[derive(Debug, Clone)]
pub struct TmleAdjState {
    pub fit: AdjustedFit,
    rows: Vec<RowCache>,
    pub iter: usize,
}

/// Scaling matrix, influence function and the two score components at one
/// iterate.
#[derive(Debug, Clone)]
pub struct AdjustedEvaluation {
    pub lambda: DMatrix<f64>,
    pub lambda_condition: f64,
    pub influence: Vec<Vec<f64>>,
    /// `P_n D_adj`.
    pub score: Vec<f64>,
    /// `P_n` of the IPW term.
    pub score_observed: Vec<f64>,
    /// `P_n` of the projection term.
    pub score_projection: Vec<f64>,
    pub covariance: DMatrix<f64>,
}

impl AdjustedEvaluation {
    pub fn solved(&self, tolerance: &[f64]) -> bool {
        score_solved(&self.score, tolerance)
            && score_solved(&self.score_observed, tolerance)
            && score_solved(&self.score_projection, tolerance)
    }
}

impl TmleAdjState {
    pub fn new(ds: &CaseOnlyDataset, fit: AdjustedFit) -> Result<Self> {
        let rows = ds
            .rows()
            .iter()
            .map(|o| {
                let (state, _, f, p) = fit.mu_adj.replay(&o.w, o.t)?;
                Ok(RowCache {
                    f,
                    p,
                    big_pi: fit.big_pi_at(o)?,
                    a: o.a,
                    delta: o.delta,
                    j: o.j_f64(),
                    mu_bar_logit: fit.mu_bar_logit(o)?,
                    state,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { fit, rows, iter: 0 })
    }

    pub fn beta(&self) -> Vec<f64> {
        self.fit.beta()
    }

    pub fn big_pi_values(&self) -> Vec<f64> {
        self.rows.iter().map(|r| r.big_pi).collect()
    }

    fn clever(&self) -> Result<Vec<CleverTerms>> {
        self.rows.iter().map(|r| r.state.clever(&r.f, r.p)).collect()
    }

    pub fn evaluate(&self) -> Result<AdjustedEvaluation> {
        let n = self.rows.len() as f64;
        let s = self.fit.mu_adj.initial.beta.len();
        let clever = self.clever()?;
        let mut inv = DMatrix::zeros(s, s);
        for (r, c) in self.rows.iter().zip(&clever) {
            let wgt = scaling_weight(r.p, c.s1, c.s0) / n;
            for a in 0..s {
                for b in 0..s {
                    inv[(a, b)] += r.f[a] * r.f[b] * wgt;
                }
            }
        }
        let (lambda, lambda_condition) = invert_scaling(&inv)?;
        let mut observed = Vec::with_capacity(self.rows.len());
        let mut projection = Vec::with_capacity(self.rows.len());
        let mut influence = Vec::with_capacity(self.rows.len());
        for (r, c) in self.rows.iter().zip(&clever) {
            let h = c.at(r.a);
            let mu_bar = expit(r.mu_bar_logit);
            let mu_adj = expit(r.state.logit(r.a, &r.f));
            let t1 = if r.delta { h * (r.j - mu_bar) / r.big_pi } else { 0.0 };
            let t2 = h * (mu_bar - mu_adj);
            let lf = matvec(&lambda, &r.f);
            observed.push(lf.iter().map(|v| v * t1).collect::<Vec<f64>>());
            projection.push(lf.iter().map(|v| v * t2).collect::<Vec<f64>>());
            influence.push(lf.iter().map(|v| v * (t1 + t2)).collect::<Vec<f64>>());
        }
        Ok(AdjustedEvaluation {
            lambda,
            lambda_condition,
            score: column_means(&influence),
            score_observed: column_means(&observed),
            score_projection: column_means(&projection),
            covariance: empirical_covariance(&influence),
            influence,
        })
    }

    /// One joint fluctuation; returns `(eps1, eps2)`.
    ///
    /// `eps2` is the IPW-weighted MLE for `mu_bar`. `eps1` then regresses the
    /// fluctuated `mu_bar` on the `mu_adj` submodel; both use the clever
    /// covariate in force at the start of the step.
    pub fn step(&mut self) -> Result<(Vec<f64>, Vec<f64>)> {
        let clever = self.clever()?;
        let cols: Vec<Vec<f64>> = self
            .rows
            .iter()
            .zip(&clever)
            .map(|(r, c)| {
                let h = c.at(r.a);
                r.f.iter().map(|v| v * h).collect()
            })
            .collect();

        let obs: Vec<usize> = (0..self.rows.len()).filter(|&i| self.rows[i].delta).collect();
        let x2 = Design::from_rows(&obs.iter().map(|&i| cols[i].clone()).collect::<Vec<_>>());
        let y2: Vec<f64> = obs.iter().map(|&i| self.rows[i].j).collect();
        let w2: Vec<f64> = obs.iter().map(|&i| 1.0 / self.rows[i].big_pi).collect();
        let o2: Vec<f64> = obs.iter().map(|&i| self.rows[i].mu_bar_logit).collect();
        let eps2 = fit_glm(&x2, &y2, &w2, &o2, NewtonOptions::default())?.coef;

        for (r, col) in self.rows.iter_mut().zip(&cols) {
            r.mu_bar_logit += super::dot(&eps2, col);
        }

        let x1 = Design::from_rows(&cols);
        let y1: Vec<f64> = self.rows.iter().map(|r| expit(r.mu_bar_logit)).collect();
        let o1: Vec<f64> = self.rows.iter().map(|r| r.state.logit(r.a, &r.f)).collect();
        let w1 = vec![1.0; self.rows.len()];
        let eps1 = fit_glm(&x1, &y1, &w1, &o1, NewtonOptions::default())?.coef;

        for (r, c) in self.rows.iter_mut().zip(&clever) {
            r.state.advance(&r.f, c.h0, &eps1);
        }
        self.fit.mu_adj.steps.push(eps1.clone());
        self.fit.mu_bar_steps.push(eps2.clone());
        self.iter += 1;
        Ok((eps1, eps2))
    }
}

/// `Lambda_adj`, averaged over all case rows without a `delta` factor.
pub fn scaling_matrix_adjusted(ds: &CaseOnlyDataset, fit: &TargetedFit) -> Result<DMatrix<f64>> {
    let n = ds.n() as f64;
    let s = fit.initial.beta.len();
    let mut inv = DMatrix::zeros(s, s);
    for o in ds.rows() {
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

/// Influence function
/// `(delta / Pi) (Lambda f) H (j - mu_bar) + (Lambda f) H (mu_bar - mu_adj)`.
pub fn eif_adjusted(obs: &Observation, fit: &AdjustedFit, lambda: &DMatrix<f64>) -> Result<Vec<f64>> {
    let (state, _, f, p) = fit.mu_adj.replay(&obs.w, obs.t)?;
    let h = state.clever(&f, p)?.at(obs.a);
    let mu_bar = expit(fit.mu_bar_logit(obs)?);
    let mu_adj = expit(state.logit(obs.a, &f));
    let ipw = if obs.delta {
        (obs.j_f64() - mu_bar) / fit.big_pi_at(obs)?
    } else {
        0.0
    };
    let t = h * (ipw + mu_bar - mu_adj);
    Ok(matvec(lambda, &f).into_iter().map(|v| v * t).collect())
}

/// Fits every nuisance of the adjusted estimator and returns the untargeted
/// state.
pub fn initial_adjusted_fit(ds: &CaseOnlyDataset, map: &FeatureMap, cfg: &TmleConfig) -> Result<AdjustedFit> {
    if !ds.overlap().adjusted_estimable() {
        return Err(Error::DegenerateArm);
    }
    let ncfg = cfg.nuisance();
    let pi = fit_pi(ds, &ncfg)?;
    let all_observed = ds.rows().iter().all(|o| o.delta);
    let big_pi = if all_observed {
        None
    } else {
        Some(fit_big_pi(ds, &ncfg)?)
    };
    let (mu_bar, initial) = match cfg.mu_bar_constant {
        Some(c) => {
            if !(c > 0.0 && c < 1.0) {
                return Err(Error::InvalidProbability(c));
            }
            let mb = FittedProbability::constant(NuisanceInput::Full, c);
            let pseudo = vec![c; ds.n()];
            let init = fit_sequential(ds, map, &cfg.basis, &pseudo, &cfg.penalty, &cfg.solver)?;
            (MuBarModel::Fitted(mb), init)
        }
        None if ds.q() == 0 => {
            let fit = fit_partially_linear(ds, map, &cfg.basis, &cfg.penalty, &cfg.solver)?;
            (MuBarModel::Structural(fit.clone()), fit)
        }
        None => {
            let mb = fit_mu_bar(ds, &ncfg)?;
            let pseudo = mb.eval_all(ds)?;
            let init = fit_sequential(ds, map, &cfg.basis, &pseudo, &cfg.penalty, &cfg.solver)?;
            (MuBarModel::Fitted(mb), init)
        }
    };
    Ok(AdjustedFit {
        mu_adj: TargetedFit::new(initial, pi),
        mu_bar,
        big_pi,
        mu_bar_steps: Vec::new(),
    })
}

/// Runs the adjusted targeted estimator from freshly fitted nuisances.
pub fn run_tmle_adjusted(ds: &CaseOnlyDataset, map: &FeatureMap, cfg: &TmleConfig) -> Result<TmleResult> {
    let fit = initial_adjusted_fit(ds, map, cfg)?;
    target_adjusted(TmleAdjState::new(ds, fit)?, cfg.max_iter)
}

/// Iterates joint fluctuations under the same stopping rule as the basic
/// estimator, required of the total score and of both of its components.
pub fn target_adjusted(mut state: TmleAdjState, max_iter: usize) -> Result<TmleResult> {
    let n = state.rows.len();
    let initial_beta = state.beta();
    let mut eval = state.evaluate()?;
    let one_step: Vec<f64> = initial_beta
        .iter()
        .zip(&eval.score)
        .map(|(b, d)| b + d)
        .collect();
    let mut tolerance = score_tolerance(&eval.covariance, n);
    let mut converged = eval.solved(&tolerance);
    let mut epsilon_norms = Vec::new();
    while !converged && state.iter < max_iter {
        let (e1, e2) = state.step()?;
        epsilon_norms.push(e1.iter().chain(&e2).fold(0.0f64, |m, e| m.max(e.abs())));
        eval = state.evaluate()?;
        tolerance = score_tolerance(&eval.covariance, n);
        converged = eval.solved(&tolerance);
    }
    let mut warnings = Vec::new();
    if !converged {
        let msg = format!("score equation not solved after {} iterations", state.iter);
        warn!("{msg}");
        warnings.push(msg);
    }
    if state.fit.big_pi.is_some() {
        let diag = missingness_diagnostics(&state.big_pi_values());
        if diag.positivity_warning {
            let msg = format!(
                "positivity: minimum fitted strain-observation probability {:.4}",
                diag.min_big_pi
            );
            warn!("{msg}");
            warnings.push(msg);
        }
    }
    if state.rows.iter().any(|r| r.p <= PROB_FLOOR || r.p >= 1.0 - PROB_FLOOR) {
        warnings.push("vaccination propensity reached the truncation bound".into());
    }
    Ok(TmleResult {
        estimator: EstimatorKind::TmleAdjusted,
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
