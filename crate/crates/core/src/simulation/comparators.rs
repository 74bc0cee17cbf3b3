//! Parametric logistic-regression comparators fit on the strain-observed
//! cases. Both put the vaccine effect in the columns `a f(w, t)` and read
//! `beta` off those coefficients, with model-based standard errors.

use nalgebra::{DMatrix, DVector};

use crate::data::{CaseOnlyDataset, Observation};
use crate::error::{Error, Result};
use crate::features::FeatureMap;
use crate::inference::{wald_from_parts, InferenceReport};
use crate::plogit::{fit_glm, Design, NewtonOptions};

#[derive(Debug, Clone, PartialEq)]
pub struct ComparatorFit {
    pub beta: Vec<f64>,
    pub se: Vec<f64>,
    /// Model-based covariance of `beta`.
    pub covariance: Vec<Vec<f64>>,
    /// Number of design columns actually used.
    pub columns: usize,
}

impl ComparatorFit {
    pub fn inference(&self, alpha: f64) -> Result<InferenceReport> {
        wald_from_parts(&self.beta, &self.se, alpha)
    }
}

/// True when `candidate` is (numerically) a linear combination of `basis`
/// over the rows.
fn in_span(basis: &[Vec<f64>], candidate: &[f64]) -> bool {
    let m = candidate.len();
    if basis.is_empty() || m == 0 {
        return false;
    }
    let x = DMatrix::from_fn(m, basis.len(), |i, k| basis[k][i]);
    let y = DVector::from_column_slice(candidate);
    let svd = x.clone().svd(true, true);
    let Ok(coef) = svd.solve(&y, 1e-12) else {
        return false;
    };
    let resid = (&x * coef - &y).norm();
    resid <= 1e-9 * y.norm().max(1.0)
}

/// Fits `J ~ controls + a f(w, t) + interactions` over the strain-observed
/// rows. Vaccine interactions that are exactly spanned by the `a f` columns
/// are dropped; any other aliasing surfaces as `IllDefined`.
fn fit_comparator(
    ds: &CaseOnlyDataset,
    map: &FeatureMap,
    controls: impl Fn(&Observation) -> Vec<f64>,
    interacted: impl Fn(&Observation) -> Vec<f64>,
) -> Result<ComparatorFit> {
    let rows: Vec<&Observation> = ds.observed_strain_rows().collect();
    if rows.is_empty() {
        return Err(Error::DegenerateArm);
    }
    let s = map.dim();
    let af: Vec<Vec<f64>> = rows
        .iter()
        .map(|o| {
            let f = map.eval(&o.w, o.t)?;
            Ok(f.into_iter().map(|v| v * o.a_f64()).collect())
        })
        .collect::<Result<_>>()?;
    let af_cols: Vec<Vec<f64>> = (0..s).map(|k| af.iter().map(|r| r[k]).collect()).collect();

    let inter: Vec<Vec<f64>> = rows.iter().map(|o| interacted(o)).collect();
    let n_inter = inter.first().map_or(0, Vec::len);
    let kept: Vec<usize> = (0..n_inter)
        .filter(|&k| {
            let col: Vec<f64> = rows.iter().zip(&inter).map(|(o, r)| o.a_f64() * r[k]).collect();
            !in_span(&af_cols, &col)
        })
        .collect();

    let design: Vec<Vec<f64>> = rows
        .iter()
        .zip(&af)
        .zip(&inter)
        .map(|((o, af), r)| {
            let mut x = af.clone();
            x.extend(kept.iter().map(|&k| o.a_f64() * r[k]));
            x.extend(controls(o));
            x
        })
        .collect();
    let columns = design[0].len();
    if columns > rows.len() {
        return Err(Error::IllDefined(format!(
            "{columns} columns for {} strain-observed cases",
            rows.len()
        )));
    }
    let y: Vec<f64> = rows.iter().map(|o| o.j_f64()).collect();
    let m = y.len();
    let fit = fit_glm(&Design::from_rows(&design), &y, &vec![1.0; m], &vec![0.0; m], NewtonOptions::default())?;
    Ok(ComparatorFit {
        beta: fit.coef[..s].to_vec(),
        se: (0..s).map(|k| fit.covariance[(k, k)].max(0.0).sqrt()).collect(),
        covariance: (0..s)
            .map(|a| (0..s).map(|b| fit.covariance[(a, b)]).collect())
            .collect(),
        columns,
    })
}

fn baseline_terms(o: &Observation) -> Vec<f64> {
    let x = o.wt_input();
    let mut out = Vec::with_capacity(1 + x.len() * (x.len() + 1) / 2);
    out.push(1.0);
    out.extend_from_slice(&x);
    for i in 0..x.len() {
        for j in i + 1..x.len() {
            out.push(x[i] * x[j]);
        }
    }
    out
}

/// Main terms and all two-way interactions of `(W, T, A)`.
pub fn comparator_glm(ds: &CaseOnlyDataset, map: &FeatureMap) -> Result<ComparatorFit> {
    fit_comparator(ds, map, baseline_terms, |o| o.wt_input())
}

/// Main terms of `(W, W_T, T, A)` and the `A x W_T` interactions.
pub fn comparator_glm_naive(ds: &CaseOnlyDataset, map: &FeatureMap) -> Result<ComparatorFit> {
    fit_comparator(
        ds,
        map,
        |o| {
            let mut x = vec![1.0];
            x.extend_from_slice(&o.w);
            x.extend_from_slice(&o.w_post);
            x.push(o.t);
            x
        },
        |o| o.w_post.clone(),
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::plogit::expit;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn recovers_coefficients_of_own_model() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let truth = [0.4, -0.3];
        let rows: Vec<Observation> = (0..4000)
            .map(|i| {
                let w1: f64 = rng.random_range(-1.0..1.0);
                let w2: f64 = rng.random_range(-1.0..1.0);
                let t: f64 = rng.random_range(0.3..2.0);
                let a = rng.random::<bool>();
                let af = a as u8 as f64;
                let eta = -0.2 + 0.5 * w1 - 0.4 * w2 + 0.3 * t + 0.2 * w1 * t
                    + af * (truth[0] + truth[1] * (t - 1.0) + 0.3 * w1);
                let j = rng.random::<f64>() < expit(eta);
                Observation::new(i + 1, vec![w1, w2], a, t, vec![], true, Some(j)).unwrap()
            })
            .collect();
        let ds = CaseOnlyDataset::new(rows).unwrap();
        let fit = comparator_glm(&ds, &FeatureMap::time_shift(2, 1.0)).unwrap();
        for k in 0..2 {
            assert!((fit.beta[k] - truth[k]).abs() < 3.0 * fit.se[k], "{fit:?}");
        }
        // a t is spanned by a and a (t - 1)
        assert_eq!(fit.columns, 2 + 2 + 7);
    }

    #[test]
    fn duplicated_covariate_is_ill_defined() {
        let mut rng = ChaCha8Rng::seed_from_u64(22);
        let rows: Vec<Observation> = (0..300)
            .map(|i| {
                let w: f64 = rng.random_range(-1.0..1.0);
                let a = rng.random::<bool>();
                let j = rng.random::<bool>();
                Observation::new(i + 1, vec![w, w], a, 1.0 + w.abs(), vec![], true, Some(j)).unwrap()
            })
            .collect();
        let ds = CaseOnlyDataset::new(rows).unwrap();
        let err = comparator_glm(&ds, &FeatureMap::time_shift(2, 1.0)).unwrap_err();
        assert!(matches!(err, Error::IllDefined(_)), "{err:?}");
    }
}
