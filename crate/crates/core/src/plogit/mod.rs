//! Penalized logistic regression with fractional outcomes, observation
//! weights, fixed offsets and per-column penalty switches.
//!
//! The objective is
//!
//! ```text
//! F(b) = sum_i w_i [log(1 + exp(eta_i)) - y_i eta_i] / sum_i w_i + lambda * sum_{j penalized} |b_j|
//! eta  = offset + X b
//! ```
//!
//! minimized by proximal Newton steps: each outer iteration forms the
//! quadratic (IRLS) model of the smooth part, solves the lasso subproblem by
//! cyclic coordinate descent with an active set, then backtracks so that `F`
//! never increases. Outer iterations stop once the L1 subgradient (KKT)
//! conditions hold to `kkt_tol`.

mod design;
pub mod newton;
pub mod partially_linear;

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use design::Design;
pub use newton::{fit_glm, GlmFit, NewtonOptions};
pub use partially_linear::{fit_partially_linear, fit_sequential, PartiallyLinearFit};

use crate::error::{Error, Result};

#[inline]
pub fn expit(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

#[inline]
pub fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

/// `log(1 + exp(x))` without overflow.
#[inline]
pub fn log1pexp(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

/// Probability truncation applied to fitted nuisance probabilities.
pub const PROB_FLOOR: f64 = 1e-4;

#[inline]
pub fn clip_prob(p: f64) -> f64 {
    p.clamp(PROB_FLOOR, 1.0 - PROB_FLOOR)
}

/// One weighted logistic problem. Rows with zero weight are ignored.
#[derive(Debug, Clone, Copy)]
pub struct LogisticProblem<'a> {
    pub x: &'a Design,
    pub y: &'a [f64],
    pub weights: &'a [f64],
    pub offset: &'a [f64],
    /// `false` marks columns excluded from the L1 penalty.
    pub penalized: &'a [bool],
}

impl<'a> LogisticProblem<'a> {
    pub fn validate(&self) -> Result<()> {
        let n = self.x.nrows();
        for len in [self.y.len(), self.weights.len(), self.offset.len()] {
            if len != n {
                return Err(Error::DimensionMismatch {
                    expected: n,
                    got: len,
                });
            }
        }
        if self.penalized.len() != self.x.ncols() {
            return Err(Error::DimensionMismatch {
                expected: self.x.ncols(),
                got: self.penalized.len(),
            });
        }
        if let Some((i, &y)) = self
            .y
            .iter()
            .enumerate()
            .find(|(_, y)| !(0.0..=1.0).contains(*y))
        {
            return Err(Error::InvalidPseudoOutcome { row: i, value: y });
        }
        if self.weights.iter().any(|w| *w < 0.0 || !w.is_finite()) {
            return Err(Error::InvalidArgument("weights must be finite and nonnegative".into()));
        }
        if !(self.weights.iter().sum::<f64>() > 0.0) {
            return Err(Error::AllWeightsZero);
        }
        Ok(())
    }

    fn weight_sum(&self) -> f64 {
        self.weights.iter().sum()
    }

    fn eta(&self, coef: &[f64]) -> Vec<f64> {
        let mut eta = self.x.mul_vec(coef);
        for (e, o) in eta.iter_mut().zip(self.offset) {
            *e += o;
        }
        eta
    }

    /// Weighted mean logistic loss at the given linear predictor.
    fn smooth_loss_at(&self, eta: &[f64]) -> f64 {
        let mut s = 0.0;
        for i in 0..eta.len() {
            let w = self.weights[i];
            if w != 0.0 {
                s += w * (log1pexp(eta[i]) - self.y[i] * eta[i]);
            }
        }
        s / self.weight_sum()
    }

    fn penalty(&self, coef: &[f64], lambda: f64) -> f64 {
        coef.iter()
            .zip(self.penalized)
            .filter(|(b, &pen)| pen && **b != 0.0)
            .map(|(b, _)| lambda * b.abs())
            .sum()
    }

    pub fn objective(&self, coef: &[f64], lambda: f64) -> f64 {
        self.smooth_loss_at(&self.eta(coef)) + self.penalty(coef, lambda)
    }

    /// Gradient of the smooth (unpenalized) part.
    pub fn gradient(&self, coef: &[f64]) -> Vec<f64> {
        let eta = self.eta(coef);
        let wsum = self.weight_sum();
        let resid: Vec<f64> = (0..eta.len())
            .map(|i| self.weights[i] * (expit(eta[i]) - self.y[i]) / wsum)
            .collect();
        (0..self.x.ncols())
            .map(|j| dot(self.x.col(j), &resid))
            .collect()
    }

    /// Largest violation of the L1 optimality conditions.
    pub fn kkt_residual(&self, coef: &[f64], lambda: f64) -> f64 {
        kkt_from_gradient(&self.gradient(coef), coef, self.penalized, lambda)
    }
}

fn kkt_from_gradient(grad: &[f64], coef: &[f64], penalized: &[bool], lambda: f64) -> f64 {
    grad.iter()
        .zip(coef)
        .zip(penalized)
        .map(|((&g, &b), &pen)| {
            if !pen {
                g.abs()
            } else if b == 0.0 {
                (g.abs() - lambda).max(0.0)
            } else {
                (g + b.signum() * lambda).abs()
            }
        })
        .fold(0.0, f64::max)
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[inline]
fn soft_threshold(z: f64, gamma: f64) -> f64 {
    if z > gamma {
        z - gamma
    } else if z < -gamma {
        z + gamma
    } else {
        0.0
    }
}

/// Minimizes the quadratic model exactly with the support and signs of
/// `b + d` held fixed. Returns the step only if it keeps those signs and the
/// zero coordinates satisfy their subgradient condition, i.e. if it solves
/// the full lasso subproblem.
fn solve_on_face(
    gram: &[f64],
    g: &[f64],
    b: &[f64],
    d: &[f64],
    penalized: &[bool],
    lambda: f64,
    active: &[usize],
) -> Option<Vec<f64>> {
    let p = g.len();
    let active: Vec<usize> = active.iter().copied().filter(|&j| gram[j * p + j] > 1e-300).collect();
    if active.is_empty() {
        return None;
    }
    let sign = |j: usize| if penalized[j] { (b[j] + d[j]).signum() } else { 0.0 };
    let m = active.len();
    let q = DMatrix::from_fn(m, m, |r, c| gram[active[r] * p + active[c]]);
    let rhs = DVector::from_fn(m, |r, _| {
        let j = active[r];
        let fixed: f64 = (0..p)
            .filter(|k| !active.contains(k))
            .map(|k| gram[j * p + k] * d[k])
            .sum();
        -g[j] - lambda * sign(j) - fixed
    });
    let step = q.cholesky()?.solve(&rhs);
    let mut out = d.to_vec();
    for (r, &j) in active.iter().enumerate() {
        if !step[r].is_finite() {
            return None;
        }
        out[j] = step[r];
        if penalized[j] && (b[j] + out[j]).signum() != sign(j) {
            return None;
        }
    }
    for j in 0..p {
        if penalized[j] && !active.contains(&j) && gram[j * p + j] > 1e-300 {
            let grad = g[j] + dot(&gram[j * p..(j + 1) * p], &out);
            if grad.abs() > lambda * (1.0 + 1e-9) {
                return None;
            }
        }
    }
    Some(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverOptions {
    #[serde(default = "default_max_iter")]
    pub max_iter: usize,
    /// Stagnation threshold on the change of the objective.
    #[serde(default = "default_obj_tol")]
    pub obj_tol: f64,
    #[serde(default = "default_kkt_tol")]
    pub kkt_tol: f64,
}

fn default_max_iter() -> usize {
    10_000
}
fn default_obj_tol() -> f64 {
    1e-8
}
fn default_kkt_tol() -> f64 {
    1e-7
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            max_iter: default_max_iter(),
            obj_tol: default_obj_tol(),
            kkt_tol: default_kkt_tol(),
        }
    }
}

/// Summary of a cross-validated penalty choice.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvSummary {
    pub lambdas: Vec<f64>,
    /// Pooled out-of-fold mean loss per lambda.
    pub loss: Vec<f64>,
    pub best: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogisticFit {
    pub coef: Vec<f64>,
    pub lambda: f64,
    pub converged: bool,
    pub objective: f64,
    pub iterations: usize,
    /// Objective after each accepted outer step, starting at the initial point.
    pub trace: Vec<f64>,
    pub cv: Option<CvSummary>,
}

impl LogisticFit {
    pub fn linear_predictor(&self, x: &[f64]) -> f64 {
        dot(&self.coef, x)
    }
}

/// Minimizes the penalized objective for one `lambda`, starting from `init`.
pub fn fit_lambda(
    problem: &LogisticProblem<'_>,
    lambda: f64,
    init: Option<&[f64]>,
    opts: &SolverOptions,
) -> Result<LogisticFit> {
    problem.validate()?;
    let x = problem.x;
    let (n, p) = (x.nrows(), x.ncols());
    let wsum = problem.weight_sum();
    let vw: Vec<f64> = problem.weights.iter().map(|w| w / wsum).collect();

    let mut b = init.map_or_else(|| vec![0.0; p], <[f64]>::to_vec);
    let mut eta = problem.eta(&b);
    let mut obj = problem.smooth_loss_at(&eta) + problem.penalty(&b, lambda);
    let mut trace = vec![obj];

    let mut g = vec![0.0; p];
    let mut v = vec![0.0; n];
    let mut r = vec![0.0; n];
    let mut d = vec![0.0; p];
    let mut gram = vec![0.0; p * p];
    let mut qd = vec![0.0; p];

    for iter in 0..opts.max_iter {
        for i in 0..n {
            if vw[i] == 0.0 {
                v[i] = 0.0;
                r[i] = 0.0;
                continue;
            }
            let mu = expit(eta[i]);
            v[i] = vw[i] * mu * (1.0 - mu);
            r[i] = vw[i] * (mu - problem.y[i]);
        }
        for j in 0..p {
            g[j] = dot(x.col(j), &r);
        }
        let kkt = kkt_from_gradient(&g, &b, problem.penalized, lambda);
        if kkt <= opts.kkt_tol {
            return Ok(LogisticFit {
                coef: b,
                lambda,
                converged: true,
                objective: obj,
                iterations: iter,
                trace,
                cv: None,
            });
        }
        // weighted Gram matrix of the quadratic model
        for j in 0..p {
            let cj = x.col(j);
            let vx: Vec<f64> = cj.iter().zip(&v).map(|(a, b)| a * b).collect();
            for k in j..p {
                let q = dot(&vx, x.col(k));
                gram[j * p + k] = q;
                gram[k * p + j] = q;
            }
        }

        // lasso subproblem on the quadratic model, in terms of d = b_new - b
        d.iter_mut().for_each(|x| *x = 0.0);
        qd.iter_mut().for_each(|x| *x = 0.0);
        let update = |j: usize, d: &mut [f64], qd: &mut [f64]| -> f64 {
            let c = gram[j * p + j];
            if c <= 1e-300 {
                return 0.0;
            }
            let bj = b[j] + d[j];
            let z = bj * c - (g[j] + qd[j]);
            let new = if problem.penalized[j] {
                soft_threshold(z, lambda) / c
            } else {
                z / c
            };
            let delta = new - bj;
            if delta != 0.0 {
                d[j] += delta;
                let row = &gram[j * p..(j + 1) * p];
                for (q, gk) in qd.iter_mut().zip(row) {
                    *q += delta * gk;
                }
            }
            delta.abs() * c.sqrt()
        };
        // inexact subproblem solves far from the optimum
        let inner_tol = (1e-2 * kkt).min(1e-3).max(1e-3 * opts.kkt_tol);
        for _ in 0..1000 {
            let mut max_change = 0.0f64;
            for j in 0..p {
                max_change = max_change.max(update(j, &mut d, &mut qd));
            }
            if max_change < inner_tol {
                break;
            }
            let active: Vec<usize> = (0..p)
                .filter(|&j| !problem.penalized[j] || b[j] + d[j] != 0.0)
                .collect();
            if let Some(exact) = solve_on_face(&gram, &g, &b, &d, problem.penalized, lambda, &active) {
                d = exact;
                for (k, q) in qd.iter_mut().enumerate() {
                    *q = dot(&gram[k * p..(k + 1) * p], &d);
                }
                break;
            }
            for _ in 0..10_000 {
                let mut c = 0.0f64;
                for &j in &active {
                    c = c.max(update(j, &mut d, &mut qd));
                }
                if c < inner_tol {
                    break;
                }
            }
        }
        let u = x.mul_vec(&d);

        // backtracking on the composite objective
        let mut t = 1.0;
        let mut accepted = None;
        for _ in 0..60 {
            let cand: Vec<f64> = b.iter().zip(&d).map(|(bi, di)| bi + t * di).collect();
            let cand_eta: Vec<f64> = eta.iter().zip(&u).map(|(e, ui)| e + t * ui).collect();
            let cand_obj = problem.smooth_loss_at(&cand_eta) + problem.penalty(&cand, lambda);
            if cand_obj <= obj {
                accepted = Some((cand, cand_eta, cand_obj));
                break;
            }
            t *= 0.5;
        }
        match accepted {
            Some((nb, ne, nobj)) => {
                let change = obj - nobj;
                b = nb;
                eta = ne;
                obj = nobj;
                trace.push(obj);
                if change <= f64::EPSILON * obj.abs().max(1.0) && t < 1.0 {
                    // no further progress possible in floating point
                    let kkt = problem.kkt_residual(&b, lambda);
                    return Ok(LogisticFit {
                        coef: b,
                        lambda,
                        converged: kkt <= opts.kkt_tol.max(opts.obj_tol),
                        objective: obj,
                        iterations: iter + 1,
                        trace,
                        cv: None,
                    });
                }
            }
            None => {
                let kkt = problem.kkt_residual(&b, lambda);
                return Ok(LogisticFit {
                    coef: b,
                    lambda,
                    converged: kkt <= opts.kkt_tol.max(opts.obj_tol),
                    objective: obj,
                    iterations: iter + 1,
                    trace,
                    cv: None,
                });
            }
        }
    }
    Err(Error::NonConvergence {
        iterations: opts.max_iter,
    })
}

/// Fits a decreasing lambda sequence with warm starts.
pub fn fit_path(
    problem: &LogisticProblem<'_>,
    lambdas: &[f64],
    init: Option<&[f64]>,
    opts: &SolverOptions,
) -> Result<Vec<LogisticFit>> {
    let mut out: Vec<LogisticFit> = Vec::with_capacity(lambdas.len());
    for &lambda in lambdas {
        let start = out.last().map(|f| f.coef.as_slice()).or(init);
        out.push(fit_lambda(problem, lambda, start, opts)?);
    }
    Ok(out)
}

/// Smallest lambda at which every penalized coefficient is zero, together
/// with the unpenalized-only fit it is computed from.
pub fn lambda_max(problem: &LogisticProblem<'_>, opts: &SolverOptions) -> Result<(f64, LogisticFit)> {
    let null = fit_lambda(problem, f64::INFINITY, None, opts)?;
    let grad = problem.gradient(&null.coef);
    let lmax = grad
        .iter()
        .zip(problem.penalized)
        .filter(|(_, &p)| p)
        .map(|(g, _)| g.abs())
        .fold(0.0, f64::max);
    Ok((lmax, null))
}

/// Penalty selection.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum LambdaGrid {
    /// `count` log-spaced values from the data-driven maximum down to
    /// `min_ratio` times it.
    Auto { count: usize, min_ratio: f64 },
    /// Explicit values; a single value skips cross-validation.
    Fixed(Vec<f64>),
}

impl Default for LambdaGrid {
    fn default() -> Self {
        LambdaGrid::Auto {
            count: 12,
            min_ratio: 1e-3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PenaltyConfig {
    #[serde(default)]
    pub grid: LambdaGrid,
    #[serde(default = "default_folds")]
    pub folds: usize,
    /// Seed for fold assignment.
    #[serde(default)]
    pub seed: u64,
}

fn default_folds() -> usize {
    10
}

impl Default for PenaltyConfig {
    fn default() -> Self {
        Self {
            grid: LambdaGrid::default(),
            folds: default_folds(),
            seed: 0,
        }
    }
}

impl PenaltyConfig {
    pub fn fixed(lambda: f64) -> Self {
        Self {
            grid: LambdaGrid::Fixed(vec![lambda]),
            ..Self::default()
        }
    }
}

/// Deterministic fold labels for `n` rows: a seeded permutation dealt
/// round-robin into `folds` groups.
pub fn fold_ids(n: usize, folds: usize, seed: u64) -> Vec<usize> {
    let mut perm: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (n as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    perm.shuffle(&mut rng);
    let mut ids = vec![0; n];
    for (pos, &i) in perm.iter().enumerate() {
        ids[i] = pos % folds;
    }
    ids
}

/// Fits with the penalty chosen by `config`: a fixed value, or the grid value
/// minimizing the pooled K-fold out-of-fold loss, refit on all rows.
pub fn fit_logistic(
    problem: &LogisticProblem<'_>,
    config: &PenaltyConfig,
    opts: &SolverOptions,
) -> Result<LogisticFit> {
    problem.validate()?;
    let mut lambdas = match &config.grid {
        LambdaGrid::Fixed(v) => v.clone(),
        LambdaGrid::Auto { count, min_ratio } => {
            if !problem.penalized.iter().any(|&p| p) {
                vec![0.0]
            } else {
                let (lmax, _) = lambda_max(problem, opts)?;
                let count = (*count).max(1);
                (0..count)
                    .map(|k| {
                        let frac = if count == 1 { 0.0 } else { k as f64 / (count - 1) as f64 };
                        lmax * min_ratio.powf(frac)
                    })
                    .collect()
            }
        }
    };
    if lambdas.is_empty() || lambdas.iter().any(|l| !(*l >= 0.0)) {
        return Err(Error::InvalidArgument("lambda grid must be nonempty and nonnegative".into()));
    }
    lambdas.sort_by(|a, b| b.total_cmp(a));
    if lambdas.len() == 1 {
        return fit_lambda(problem, lambdas[0], None, opts);
    }

    let n = problem.x.nrows();
    let used = problem.weights.iter().filter(|w| **w > 0.0).count();
    let folds = config.folds.clamp(2, used.max(2));
    let ids = fold_ids(n, folds, config.seed);

    let per_fold: Vec<Vec<f64>> = (0..folds)
        .into_par_iter()
        .map(|k| {
            let train_w: Vec<f64> = (0..n)
                .map(|i| if ids[i] == k { 0.0 } else { problem.weights[i] })
                .collect();
            let train = LogisticProblem {
                weights: &train_w,
                ..*problem
            };
            let mut losses = vec![0.0; lambdas.len()];
            if !(train_w.iter().sum::<f64>() > 0.0) {
                return losses;
            }
            let mut start: Option<Vec<f64>> = None;
            for (l, &lambda) in lambdas.iter().enumerate() {
                match fit_lambda(&train, lambda, start.as_deref(), opts) {
                    Ok(fit) => {
                        let eta = problem.eta(&fit.coef);
                        losses[l] = (0..n)
                            .filter(|&i| ids[i] == k)
                            .map(|i| {
                                problem.weights[i] * (log1pexp(eta[i]) - problem.y[i] * eta[i])
                            })
                            .sum();
                        start = Some(fit.coef);
                    }
                    Err(_) => losses[l] = f64::INFINITY,
                }
            }
            losses
        })
        .collect();

    let wsum = problem.weight_sum();
    let loss: Vec<f64> = (0..lambdas.len())
        .map(|l| per_fold.iter().map(|f| f[l]).sum::<f64>() / wsum)
        .collect();
    let best = loss
        .iter()
        .enumerate()
        .fold(0, |best, (l, &v)| if v < loss[best] { l } else { best });
    let path = fit_path(problem, &lambdas[..=best], None, opts)?;
    let mut fit = path.into_iter().last().expect("nonempty path");
    fit.cv = Some(CvSummary {
        lambdas,
        loss,
        best,
    });
    Ok(fit)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn problem_parts(n: usize, seed: u64) -> (Design, Vec<f64>) {
        use rand::Rng;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let rows: Vec<Vec<f64>> = (0..n)
            .map(|_| vec![1.0, rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)])
            .collect();
        let y = rows
            .iter()
            .map(|r| {
                if rng.random::<f64>() < expit(0.3 + 1.5 * r[1] - r[2]) {
                    1.0
                } else {
                    0.0
                }
            })
            .collect();
        (Design::from_rows(&rows), y)
    }

    #[test]
    fn intercept_only_mle() {
        let x = Design::from_rows(&vec![vec![1.0]; 10]);
        let y: Vec<f64> = (0..10).map(|i| if i < 3 { 1.0 } else { 0.0 }).collect();
        let p = LogisticProblem {
            x: &x,
            y: &y,
            weights: &[1.0; 10],
            offset: &[0.0; 10],
            penalized: &[false],
        };
        let fit = fit_lambda(&p, 0.0, None, &SolverOptions::default()).unwrap();
        assert!((fit.coef[0] - (-0.8473)).abs() < 1e-4);
        assert!((fit.coef[0] - logit(0.3)).abs() < 1e-7);
    }

    #[test]
    fn infinite_penalty_zeroes_penalized_coefficients() {
        let (x, y) = problem_parts(200, 1);
        let p = LogisticProblem {
            x: &x,
            y: &y,
            weights: &vec![1.0; 200],
            offset: &vec![0.0; 200],
            penalized: &[false, true, true],
        };
        let fit = fit_lambda(&p, f64::INFINITY, None, &SolverOptions::default()).unwrap();
        assert_eq!(fit.coef[1], 0.0);
        assert_eq!(fit.coef[2], 0.0);
        let ybar = y.iter().sum::<f64>() / 200.0;
        assert!((fit.coef[0] - logit(ybar)).abs() < 1e-7);
    }

    #[test]
    fn separable_data_with_penalty_is_finite_and_kkt() {
        let rows: Vec<Vec<f64>> = (0..20)
            .map(|i| vec![1.0, i as f64 / 10.0 - 1.0, ((i * 7) % 5) as f64 / 5.0])
            .collect();
        let y: Vec<f64> = (0..20).map(|i| if i >= 10 { 1.0 } else { 0.0 }).collect();
        let x = Design::from_rows(&rows);
        let p = LogisticProblem {
            x: &x,
            y: &y,
            weights: &[1.0; 20],
            offset: &[0.0; 20],
            penalized: &[false, true, true],
        };
        let fit = fit_lambda(&p, 0.1, None, &SolverOptions::default()).unwrap();
        assert!(fit.converged);
        assert!(fit.coef.iter().all(|c| c.is_finite()));
        assert!(p.kkt_residual(&fit.coef, 0.1) <= 1e-6);
    }

    #[test]
    fn objective_is_monotone() {
        let (x, y) = problem_parts(300, 2);
        let p = LogisticProblem {
            x: &x,
            y: &y,
            weights: &vec![1.0; 300],
            offset: &vec![0.2; 300],
            penalized: &[false, true, true],
        };
        let fit = fit_lambda(&p, 0.01, None, &SolverOptions::default()).unwrap();
        for w in fit.trace.windows(2) {
            assert!(w[1] <= w[0]);
        }
    }

    #[test]
    fn rejects_zero_weights() {
        let (x, y) = problem_parts(10, 3);
        let p = LogisticProblem {
            x: &x,
            y: &y,
            weights: &[0.0; 10],
            offset: &[0.0; 10],
            penalized: &[false, true, true],
        };
        assert!(matches!(
            fit_lambda(&p, 0.1, None, &SolverOptions::default()),
            Err(Error::AllWeightsZero)
        ));
    }

    #[test]
    fn cross_validation_is_deterministic() {
        let (x, y) = problem_parts(300, 4);
        let p = LogisticProblem {
            x: &x,
            y: &y,
            weights: &vec![1.0; 300],
            offset: &vec![0.0; 300],
            penalized: &[false, true, true],
        };
        let cfg = PenaltyConfig::default();
        let a = fit_logistic(&p, &cfg, &SolverOptions::default()).unwrap();
        let b = fit_logistic(&p, &cfg, &SolverOptions::default()).unwrap();
        assert_eq!(a.coef, b.coef);
        let cv = a.cv.unwrap();
        assert_eq!(cv.lambdas.len(), 12);
        assert!(p.kkt_residual(&a.coef, a.lambda) <= 1e-6);
    }

    #[test]
    fn fold_ids_are_balanced() {
        let ids = fold_ids(103, 10, 9);
        let mut counts = [0; 10];
        for i in ids {
            counts[i] += 1;
        }
        assert!(counts.iter().all(|&c| c == 10 || c == 11));
    }
}
