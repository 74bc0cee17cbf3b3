//! Partially linear logistic regression
//! `logit mu(a, w, t) = a * beta' f(w, t) + h(w, t)`, with `beta` unpenalized
//! and `h` an L1-penalized expansion over a spline basis of `(w, t)`.

use serde::{Deserialize, Serialize};

use super::{expit, fit_logistic, CvSummary, Design, LogisticProblem, PenaltyConfig, SolverOptions};
use crate::data::CaseOnlyDataset;
use crate::error::{Error, Result};
use crate::features::{Basis, BasisSpec, FeatureMap};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PartiallyLinearFit {
    pub beta: Vec<f64>,
    pub h_coef: Vec<f64>,
    pub map: FeatureMap,
    pub basis: Basis,
    pub lambda: f64,
    pub converged: bool,
    pub cv: Option<CvSummary>,
}

impl PartiallyLinearFit {
    /// `h(w, t)`, the log-odds among the unvaccinated.
    pub fn h(&self, w: &[f64], t: f64) -> Result<f64> {
        let mut x = w.to_vec();
        x.push(t);
        let b = self.basis.eval(&x)?;
        Ok(b.iter().zip(&self.h_coef).map(|(x, c)| x * c).sum())
    }

    pub fn log_or(&self, w: &[f64], t: f64) -> Result<f64> {
        let f = self.map.eval(w, t)?;
        Ok(f.iter().zip(&self.beta).map(|(x, b)| x * b).sum())
    }

    pub fn logit_mu(&self, a: bool, w: &[f64], t: f64) -> Result<f64> {
        let h = self.h(w, t)?;
        Ok(if a { h + self.log_or(w, t)? } else { h })
    }

    pub fn mu(&self, a: bool, w: &[f64], t: f64) -> Result<f64> {
        Ok(expit(self.logit_mu(a, w, t)?))
    }
}

struct PlRow<'a> {
    w: &'a [f64],
    t: f64,
    a: bool,
    y: f64,
}

fn fit_rows(
    rows: &[PlRow<'_>],
    map: &FeatureMap,
    basis: Basis,
    penalty: &PenaltyConfig,
    opts: &SolverOptions,
) -> Result<PartiallyLinearFit> {
    let has = |arm: bool| rows.iter().any(|r| r.a == arm);
    if !has(true) || !has(false) {
        return Err(Error::DegenerateArm);
    }
    let s = map.dim();
    let p = basis.dim();
    let mut x = Design::zeros(rows.len(), s + p);
    let mut buf = Vec::with_capacity(p);
    let mut input = Vec::new();
    for (i, r) in rows.iter().enumerate() {
        if r.a {
            for (k, v) in map.eval(r.w, r.t)?.into_iter().enumerate() {
                x.set(i, k, v);
            }
        }
        input.clear();
        input.extend_from_slice(r.w);
        input.push(r.t);
        basis.eval_into(&input, &mut buf)?;
        for (k, &v) in buf.iter().enumerate() {
            x.set(i, s + k, v);
        }
    }
    let y: Vec<f64> = rows.iter().map(|r| r.y).collect();
    let weights = vec![1.0; rows.len()];
    let offset = vec![0.0; rows.len()];
    // structural columns and the basis intercept are unpenalized
    let penalized: Vec<bool> = (0..s + p).map(|k| k > s).collect();
    let problem = LogisticProblem {
        x: &x,
        y: &y,
        weights: &weights,
        offset: &offset,
        penalized: &penalized,
    };
    let fit = fit_logistic(&problem, penalty, opts)?;
    Ok(PartiallyLinearFit {
        beta: fit.coef[..s].to_vec(),
        h_coef: fit.coef[s..].to_vec(),
        map: map.clone(),
        basis,
        lambda: fit.lambda,
        converged: fit.converged,
        cv: fit.cv,
    })
}

/// Partially linear logistic regression of the strain label on `(t, a, w)`
/// over the strain-observed cases.
pub fn fit_partially_linear(
    ds: &CaseOnlyDataset,
    map: &FeatureMap,
    basis: &BasisSpec,
    penalty: &PenaltyConfig,
    opts: &SolverOptions,
) -> Result<PartiallyLinearFit> {
    let rows: Vec<PlRow<'_>> = ds
        .observed_strain_rows()
        .map(|o| PlRow {
            w: &o.w,
            t: o.t,
            a: o.a,
            y: o.j_f64(),
        })
        .collect();
    if rows.is_empty() {
        return Err(Error::DegenerateArm);
    }
    let inputs: Vec<Vec<f64>> = ds.observed_strain_rows().map(|o| o.wt_input()).collect();
    let basis = Basis::from_data(basis, &inputs)?;
    fit_rows(&rows, map, basis, penalty, opts)
}

/// Sequential (pseudo-outcome) regression: regresses `mu_bar[i]` on
/// `(t, a, w)` over all cases, giving a fit of the `W_T`-marginalized strain
/// probability that respects the partially linear form.
pub fn fit_sequential(
    ds: &CaseOnlyDataset,
    map: &FeatureMap,
    basis: &BasisSpec,
    mu_bar: &[f64],
    penalty: &PenaltyConfig,
    opts: &SolverOptions,
) -> Result<PartiallyLinearFit> {
    if mu_bar.len() != ds.n() {
        return Err(Error::DimensionMismatch {
            expected: ds.n(),
            got: mu_bar.len(),
        });
    }
    if let Some((row, &value)) = mu_bar
        .iter()
        .enumerate()
        .find(|(_, v)| !(0.0..=1.0).contains(*v))
    {
        return Err(Error::InvalidPseudoOutcome { row, value });
    }
    let rows: Vec<PlRow<'_>> = ds
        .rows()
        .iter()
        .zip(mu_bar)
        .map(|(o, &y)| PlRow {
            w: &o.w,
            t: o.t,
            a: o.a,
            y,
        })
        .collect();
    let inputs: Vec<Vec<f64>> = ds.rows().iter().map(|o| o.wt_input()).collect();
    let basis = Basis::from_data(basis, &inputs)?;
    fit_rows(&rows, map, basis, penalty, opts)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::Observation;

    fn two_by_two() -> CaseOnlyDataset {
        let mut rows = Vec::new();
        for (a, j, count) in [(true, true, 30), (true, false, 20), (false, true, 25), (false, false, 25)] {
            for _ in 0..count {
                rows.push(Observation::new(0, vec![], a, 1.0, vec![], true, Some(j)).unwrap());
            }
        }
        CaseOnlyDataset::new(rows).unwrap()
    }

    #[test]
    fn two_by_two_cross_product_ratio() {
        let fit = fit_partially_linear(
            &two_by_two(),
            &FeatureMap::intercept(0),
            &BasisSpec::default(),
            &PenaltyConfig::default(),
            &SolverOptions::default(),
        )
        .unwrap();
        let oracle = (30.0 * 25.0 / (20.0 * 25.0f64)).ln();
        assert!((fit.beta[0] - oracle).abs() < 1e-7);
        assert!((fit.beta[0] - 0.4055).abs() < 1e-4);
        assert!(fit.h(&[], 1.0).unwrap().abs() < 1e-7);
    }

    #[test]
    fn constant_pseudo_outcome_has_no_signal() {
        let ds = two_by_two();
        let fit = fit_sequential(
            &ds,
            &FeatureMap::intercept(0),
            &BasisSpec::default(),
            &vec![0.5; ds.n()],
            &PenaltyConfig::default(),
            &SolverOptions::default(),
        )
        .unwrap();
        assert!(fit.beta[0].abs() < 1e-9);
        assert!(fit.h(&[], 1.0).unwrap().abs() < 1e-9);
    }

    #[test]
    fn rejects_out_of_range_pseudo_outcomes() {
        let ds = two_by_two();
        let mut mu = vec![0.5; ds.n()];
        mu[3] = 1.2;
        let err = fit_sequential(
            &ds,
            &FeatureMap::intercept(0),
            &BasisSpec::default(),
            &mu,
            &PenaltyConfig::default(),
            &SolverOptions::default(),
        )
        .unwrap_err();
        assert!(matches!(err, Error::InvalidPseudoOutcome { row: 3, .. }));
    }

    #[test]
    fn empty_arm_is_degenerate() {
        let rows: Vec<Observation> = (0..10)
            .map(|i| Observation::new(0, vec![], true, 1.0, vec![], true, Some(i % 2 == 0)).unwrap())
            .collect();
        let err = fit_partially_linear(
            &CaseOnlyDataset::new(rows).unwrap(),
            &FeatureMap::intercept(0),
            &BasisSpec::default(),
            &PenaltyConfig::default(),
            &SolverOptions::default(),
        )
        .unwrap_err();
        assert!(matches!(err, Error::DegenerateArm));
    }
}
