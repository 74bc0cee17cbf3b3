//! Unpenalized weighted logistic regression by damped Newton-Raphson.
//!
//! Used for the low-dimensional fluctuation MLEs and the comparator
//! regressions, where a full Hessian is cheap and model-based standard
//! errors are wanted.

use nalgebra::{DMatrix, DVector};

use super::{expit, log1pexp, Design};
use crate::error::{Error, Result};

#[derive(Debug, Clone)]
pub struct GlmFit {
    pub coef: Vec<f64>,
    /// Inverse observed information `(sum_i w_i p_i (1 - p_i) x_i x_i')^-1`.
    pub covariance: DMatrix<f64>,
    pub iterations: usize,
    /// Mean weighted log-likelihood at the solution.
    pub log_likelihood: f64,
}

#[derive(Debug, Clone, Copy)]
pub struct NewtonOptions {
    pub max_iter: usize,
    /// Convergence on the max-norm of the weighted score.
    pub tol: f64,
    /// Coefficient magnitude beyond which the fit is declared separated.
    pub divergence: f64,
}

impl Default for NewtonOptions {
    fn default() -> Self {
        Self {
            max_iter: 100,
            tol: 1e-10,
            divergence: 30.0,
        }
    }
}

fn mean_loglik(x: &Design, y: &[f64], w: &[f64], offset: &[f64], b: &[f64], wsum: f64) -> f64 {
    let eta = x.mul_vec(b);
    let mut ll = 0.0;
    for i in 0..y.len() {
        if w[i] == 0.0 {
            continue;
        }
        let e = eta[i] + offset[i];
        ll += w[i] * (y[i] * e - log1pexp(e));
    }
    ll / wsum
}

/// Maximizes `sum_i w_i [y_i eta_i - log(1 + exp(eta_i))]` with
/// `eta = offset + X b`. Outcomes may be fractional.
pub fn fit_glm(
    x: &Design,
    y: &[f64],
    weights: &[f64],
    offset: &[f64],
    opts: NewtonOptions,
) -> Result<GlmFit> {
    let (n, p) = (x.nrows(), x.ncols());
    if y.len() != n || weights.len() != n || offset.len() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            got: y.len().min(weights.len()).min(offset.len()),
        });
    }
    let wsum: f64 = weights.iter().sum();
    if !(wsum > 0.0) {
        return Err(Error::AllWeightsZero);
    }
    let mut b = vec![0.0; p];
    let mut ll = mean_loglik(x, y, weights, offset, &b, wsum);
    for iter in 0..=opts.max_iter {
        let eta = x.mul_vec(&b);
        let mut grad = DVector::<f64>::zeros(p);
        let mut info = DMatrix::<f64>::zeros(p, p);
        for i in 0..n {
            let wi = weights[i];
            if wi == 0.0 {
                continue;
            }
            let mu = expit(eta[i] + offset[i]);
            let v = wi * mu * (1.0 - mu);
            let r = wi * (y[i] - mu);
            for a in 0..p {
                let xa = x.get(i, a);
                grad[a] += r * xa;
                let vxa = v * xa;
                for c in a..p {
                    info[(a, c)] += vxa * x.get(i, c);
                }
            }
        }
        for a in 0..p {
            for c in 0..a {
                info[(a, c)] = info[(c, a)];
            }
        }
        let score_max = grad.amax() / wsum;
        let chol = info.clone().cholesky();
        if score_max <= opts.tol {
            let chol = chol.ok_or_else(|| {
                Error::IllDefined("information matrix is singular".into())
            })?;
            let covariance = chol.inverse();
            if covariance.iter().any(|v| !v.is_finite()) {
                return Err(Error::IllDefined("information matrix is singular".into()));
            }
            return Ok(GlmFit {
                coef: b,
                covariance,
                iterations: iter,
                log_likelihood: ll,
            });
        }
        if iter == opts.max_iter {
            break;
        }
        let chol = chol.ok_or_else(|| {
            Error::IllDefined("rank-deficient design or perfect separation".into())
        })?;
        let step = chol.solve(&grad);
        if step.iter().any(|v| !v.is_finite()) {
            return Err(Error::IllDefined("rank-deficient design".into()));
        }
        // step halving keeps the likelihood non-decreasing
        let mut t = 1.0;
        let mut accepted = false;
        for _ in 0..40 {
            let cand: Vec<f64> = b.iter().zip(step.iter()).map(|(bi, si)| bi + t * si).collect();
            let cand_ll = mean_loglik(x, y, weights, offset, &cand, wsum);
            if cand_ll >= ll - 1e-15 * ll.abs().max(1.0) {
                b = cand;
                ll = cand_ll;
                accepted = true;
                break;
            }
            t *= 0.5;
        }
        if !accepted {
            break;
        }
        if b.iter().any(|v| v.abs() > opts.divergence) {
            return Err(Error::IllDefined(
                "coefficients diverge (quasi-complete separation)".into(),
            ));
        }
    }
    Err(Error::NonConvergence {
        iterations: opts.max_iter,
    })
}
