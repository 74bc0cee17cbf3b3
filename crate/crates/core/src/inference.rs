//! Wald inference for the log odds-ratio coefficients and pointwise log OR /
//! relative VE curves from the influence-function covariance.

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{Error, Result};
use crate::features::FeatureMap;
use crate::tmle::TmleResult;

pub const DEFAULT_ALPHA: f64 = 0.05;

fn standard_normal() -> Normal {
    Normal::new(0.0, 1.0).expect("unit normal")
}

/// `z_{1 - alpha / 2}`.
pub fn normal_quantile(alpha: f64) -> Result<f64> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::InvalidArgument(format!("alpha must lie in (0, 1), got {alpha}")));
    }
    Ok(standard_normal().inverse_cdf(1.0 - alpha / 2.0))
}

/// Two-sided p-value of a standard normal statistic.
pub fn two_sided_p(z: f64) -> f64 {
    2.0 * (1.0 - standard_normal().cdf(z.abs()))
}

/// Log odds ratio at one covariate point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub w: Vec<f64>,
    pub t: f64,
    pub log_or: f64,
    pub se: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    /// `exp(log_or)`.
    pub rel_ve: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InferenceReport {
    pub alpha: f64,
    pub beta: Vec<f64>,
    pub se: Vec<f64>,
    pub ci_low: Vec<f64>,
    pub ci_high: Vec<f64>,
    /// Two-sided, `H0: beta_j = 0`.
    pub p_values: Vec<f64>,
    pub curve: Vec<CurvePoint>,
}

fn require_converged(result: &TmleResult) -> Result<()> {
    if !result.converged {
        return Err(Error::NotConverged {
            iterations: result.iterations,
        });
    }
    Ok(())
}

/// Normal-theory intervals and tests with `se_j = sqrt(Sigma_jj / n)`.
pub fn wald_inference(result: &TmleResult, alpha: f64) -> Result<InferenceReport> {
    require_converged(result)?;
    wald_from_parts(&result.beta_hat, &result.standard_errors(), alpha)
}

/// Wald summary from point estimates and standard errors.
pub fn wald_from_parts(beta: &[f64], se: &[f64], alpha: f64) -> Result<InferenceReport> {
    if beta.len() != se.len() {
        return Err(Error::DimensionMismatch {
            expected: beta.len(),
            got: se.len(),
        });
    }
    if se.iter().any(|s| !(*s > 0.0) || !s.is_finite()) {
        return Err(Error::DegenerateVariance);
    }
    let z = normal_quantile(alpha)?;
    Ok(InferenceReport {
        alpha,
        beta: beta.to_vec(),
        se: se.to_vec(),
        ci_low: beta.iter().zip(se).map(|(b, s)| b - z * s).collect(),
        ci_high: beta.iter().zip(se).map(|(b, s)| b + z * s).collect(),
        p_values: beta.iter().zip(se).map(|(b, s)| two_sided_p(b / s)).collect(),
        curve: Vec::new(),
    })
}

/// `f(w, t)' beta` with standard error `sqrt(f' Sigma f / n)`.
pub fn log_or_at(result: &TmleResult, map: &FeatureMap, w: &[f64], t: f64, alpha: f64) -> Result<CurvePoint> {
    require_converged(result)?;
    let n = result.n as f64;
    let var: Vec<Vec<f64>> = result
        .if_covariance
        .iter()
        .map(|row| row.iter().map(|v| v / n).collect())
        .collect();
    log_or_point(&result.beta_hat, &var, map, w, t, alpha)
}

/// Log odds ratio at `(w, t)` from an estimate of `beta` and its sampling
/// covariance.
pub fn log_or_point(
    beta: &[f64],
    covariance: &[Vec<f64>],
    map: &FeatureMap,
    w: &[f64],
    t: f64,
    alpha: f64,
) -> Result<CurvePoint> {
    let f = map.eval(w, t)?;
    let s = beta.len();
    if f.len() != s || covariance.len() != s {
        return Err(Error::DimensionMismatch {
            expected: s,
            got: f.len(),
        });
    }
    let log_or: f64 = f.iter().zip(beta).map(|(x, b)| x * b).sum();
    let mut quad = 0.0;
    for a in 0..s {
        for b in 0..s {
            quad += f[a] * covariance[a][b] * f[b];
        }
    }
    let se = quad.max(0.0).sqrt();
    let z = normal_quantile(alpha)?;
    Ok(CurvePoint {
        w: w.to_vec(),
        t,
        log_or,
        se,
        ci_low: log_or - z * se,
        ci_high: log_or + z * se,
        rel_ve: log_or.exp(),
    })
}

/// Evaluates [`log_or_at`] over a list of points.
pub fn log_or_curve(
    result: &TmleResult,
    map: &FeatureMap,
    points: &[(Vec<f64>, f64)],
    alpha: f64,
) -> Result<Vec<CurvePoint>> {
    points
        .iter()
        .map(|(w, t)| log_or_at(result, map, w, *t, alpha))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tmle::EstimatorKind;

    fn result(beta: Vec<f64>, cov: Vec<Vec<f64>>, n: usize) -> TmleResult {
        let s = beta.len();
        TmleResult {
            estimator: EstimatorKind::TmleBasic,
            n,
            initial_beta: beta.clone(),
            one_step: beta.clone(),
            beta_hat: beta,
            if_covariance: cov,
            score_residual: vec![0.0; s],
            score_tolerance: vec![0.0; s],
            iterations: 0,
            converged: true,
            lambda_matrix: vec![vec![0.0; s]; s],
            lambda_condition: 1.0,
            epsilon_norms: Vec::new(),
            warnings: Vec::new(),
            influence: Vec::new(),
        }
    }

    #[test]
    fn wald_interval_and_p_value() {
        let r = wald_from_parts(&[0.5], &[0.25], 0.05).unwrap();
        assert!((r.ci_low[0] - 0.010).abs() < 1e-3);
        assert!((r.ci_high[0] - 0.990).abs() < 1e-3);
        assert!((r.p_values[0] - 0.0455).abs() < 1e-4);
    }

    #[test]
    fn zero_standard_error_is_degenerate() {
        assert!(matches!(
            wald_from_parts(&[0.5], &[0.0], 0.05),
            Err(Error::DegenerateVariance)
        ));
    }

    #[test]
    fn one_sigma_interval() {
        let r = wald_from_parts(&[1.0], &[0.3], 0.32).unwrap();
        assert!((r.ci_high[0] - 1.3).abs() < 0.01);
        assert!((r.ci_low[0] - 0.7).abs() < 0.01);
    }

    #[test]
    fn interval_width_shrinks_with_alpha() {
        let wide = wald_from_parts(&[0.0], &[1.0], 0.01).unwrap();
        let narrow = wald_from_parts(&[0.0], &[1.0], 0.2).unwrap();
        assert!(wide.ci_high[0] > narrow.ci_high[0]);
    }

    #[test]
    fn se_from_covariance() {
        let r = result(vec![0.5, 0.5], vec![vec![4.0, 1.0], vec![1.0, 9.0]], 100);
        let rep = wald_inference(&r, 0.05).unwrap();
        assert!((rep.se[0] - 0.2).abs() < 1e-15);
        assert!((rep.se[1] - 0.3).abs() < 1e-15);
    }

    #[test]
    fn refuses_unconverged_results() {
        let mut r = result(vec![0.5], vec![vec![1.0]], 10);
        r.converged = false;
        assert!(matches!(wald_inference(&r, 0.05), Err(Error::NotConverged { .. })));
    }

    #[test]
    fn log_or_curve_points() {
        let r = result(vec![0.5, 0.5], vec![vec![4.0, 1.0], vec![1.0, 9.0]], 100);
        let map = FeatureMap::time_shift(0, 1.0);
        let at1 = log_or_at(&r, &map, &[], 1.0, 0.05).unwrap();
        assert_eq!(at1.log_or, 0.5);
        assert!((at1.se - 0.2).abs() < 1e-15);
        let at2 = log_or_at(&r, &map, &[], 2.0, 0.05).unwrap();
        assert!((at2.log_or - 1.0).abs() < 1e-15);
        assert!((at2.se - (4.0f64 + 2.0 + 9.0).sqrt() / 10.0).abs() < 1e-15);
        assert_eq!(at2.rel_ve, at2.log_or.exp());
    }
}
