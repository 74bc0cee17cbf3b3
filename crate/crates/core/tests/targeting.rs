use caseonly_ve::data::{CaseOnlyDataset, Observation};
use caseonly_ve::features::FeatureMap;
use caseonly_ve::inference::{log_or_at, normal_quantile};
use caseonly_ve::nuisance::fit_pi_tilde;
use caseonly_ve::plogit::{expit, fit_partially_linear, PenaltyConfig};
use caseonly_ve::simulation::{simulate_dataset, DgpConfig, MissingnessForm};
use caseonly_ve::tmle::adjusted::{initial_adjusted_fit, TmleAdjState};
use caseonly_ve::tmle::basic::TmleBasicState;
use caseonly_ve::tmle::{clever_covariate, run_tmle_adjusted, run_tmle_basic, TmleConfig, TmleResult};
use nalgebra::{DMatrix, SymmetricEigen};
use proptest::prelude::*;

fn sup(v: &[f64]) -> f64 {
    v.iter().fold(0.0f64, |m, x| m.max(x.abs()))
}

fn shifted_basic(ds: &CaseOnlyDataset, map: &FeatureMap, cfg: &TmleConfig, shift: f64) -> TmleBasicState {
    let mut initial = fit_partially_linear(ds, map, &cfg.basis, &cfg.penalty, &cfg.solver).unwrap();
    initial.beta.iter_mut().for_each(|b| *b += shift);
    let pi_tilde = fit_pi_tilde(ds, &cfg.nuisance()).unwrap();
    TmleBasicState::new(ds, initial, pi_tilde).unwrap()
}

fn shifted_adjusted(ds: &CaseOnlyDataset, map: &FeatureMap, cfg: &TmleConfig, shift: f64) -> TmleAdjState {
    let mut fit = initial_adjusted_fit(ds, map, cfg).unwrap();
    fit.mu_adj.initial.beta.iter_mut().for_each(|b| *b += shift);
    TmleAdjState::new(ds, fit).unwrap()
}

fn simulated(n: usize, seed: u64) -> CaseOnlyDataset {
    simulate_dataset(n, seed, &DgpConfig::default()).unwrap().dataset
}

#[test]
fn fluctuation_reduces_the_score_of_a_shifted_fit() {
    let ds = simulated(600, 11);
    let map = FeatureMap::time_shift(2, 1.0);
    let cfg = TmleConfig::default();

    let mut basic = shifted_basic(&ds, &map, &cfg, 0.3);
    let before = sup(&basic.evaluate().unwrap().score);
    let ll_before = basic.working_log_likelihood();
    basic.step().unwrap();
    assert!(sup(&basic.evaluate().unwrap().score) < 0.1 * before);
    assert!(basic.working_log_likelihood() >= ll_before);

    let mut adj = shifted_adjusted(&ds, &map, &cfg, 0.3);
    let before = sup(&adj.evaluate().unwrap().score);
    adj.step().unwrap();
    assert!(sup(&adj.evaluate().unwrap().score) < 0.1 * before);
}

#[test]
fn working_likelihood_never_decreases() {
    let ds = simulated(400, 12);
    let map = FeatureMap::time_shift(2, 1.0);
    let mut state = shifted_basic(&ds, &map, &TmleConfig::default(), -0.5);
    let mut ll = state.working_log_likelihood();
    for _ in 0..5 {
        state.step().unwrap();
        let next = state.working_log_likelihood();
        assert!(next >= ll - 1e-12, "{next} < {ll}");
        ll = next;
    }
}

#[test]
fn solved_state_has_vanishing_fluctuation() {
    let ds = simulated(500, 13);
    let map = FeatureMap::time_shift(2, 1.0);
    let cfg = TmleConfig::default();
    let mut basic = shifted_basic(&ds, &map, &cfg, 0.3);
    let mut adj = shifted_adjusted(&ds, &map, &cfg, 0.3);
    for _ in 0..6 {
        basic.step().unwrap();
        adj.step().unwrap();
    }
    assert!(sup(&basic.step().unwrap()) < 1e-6);
    let (e1, e2) = adj.step().unwrap();
    assert!(sup(&e1) < 1e-6 && sup(&e2) < 1e-6, "{e1:?} {e2:?}");
}

/// Profile maximum likelihood for a logistic model with one free intercept
/// per stratum and a common log odds ratio, by nested bisection.
fn stratified_mle(strata: &[Vec<(bool, bool)>]) -> f64 {
    fn bisect(lo: f64, hi: f64, g: impl Fn(f64) -> f64) -> f64 {
        // g decreasing
        let (mut lo, mut hi) = (lo, hi);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if g(mid) > 0.0 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        0.5 * (lo + hi)
    }
    let intercept = |cells: &[(bool, bool)], beta: f64| {
        bisect(-30.0, 30.0, |h| {
            cells
                .iter()
                .map(|&(a, j)| j as u8 as f64 - expit(h + if a { beta } else { 0.0 }))
                .sum()
        })
    };
    bisect(-20.0, 20.0, |beta| {
        strata
            .iter()
            .map(|cells| {
                let h = intercept(cells, beta);
                cells
                    .iter()
                    .filter(|(a, _)| *a)
                    .map(|&(_, j)| j as u8 as f64 - expit(h + beta))
                    .sum::<f64>()
            })
            .sum()
    })
}

#[test]
fn matches_stratified_maximum_likelihood() {
    // (a, j) counts for w = 0 and w = 1
    let tables = [[(true, true, 18), (true, false, 12), (false, true, 10), (false, false, 20)],
        [(true, true, 9), (true, false, 21), (false, true, 7), (false, false, 33)]];
    let mut rows = Vec::new();
    let mut strata = Vec::new();
    for (w, table) in tables.iter().enumerate() {
        let mut cells = Vec::new();
        for &(a, j, count) in table {
            for _ in 0..count {
                rows.push(Observation::new(rows.len() + 1, vec![w as f64], a, 1.0, vec![], true, Some(j)).unwrap());
                cells.push((a, j));
            }
        }
        strata.push(cells);
    }
    let ds = CaseOnlyDataset::new(rows).unwrap();
    let oracle = stratified_mle(&strata);
    let cfg = TmleConfig {
        penalty: PenaltyConfig::fixed(0.0),
        ..TmleConfig::default()
    };
    let map = FeatureMap::intercept(1);
    for r in [run_tmle_basic(&ds, &map, &cfg).unwrap(), run_tmle_adjusted(&ds, &map, &cfg).unwrap()] {
        assert!(r.converged);
        assert!((r.beta_hat[0] - oracle).abs() < 1e-6, "{} vs {oracle}", r.beta_hat[0]);
    }
}

fn assert_psd(r: &TmleResult) {
    let s = r.beta_hat.len();
    let m = DMatrix::from_fn(s, s, |i, j| r.if_covariance[i][j]);
    assert!((&m - m.transpose()).norm() < 1e-12);
    let lo = SymmetricEigen::new(m).eigenvalues.min();
    assert!(lo >= -1e-12, "smallest eigenvalue {lo}");
}

#[test]
fn inference_is_consistent_with_the_delta_method() {
    let ds = simulated(800, 14);
    let map = FeatureMap::time_shift(2, 1.0);
    let cfg = TmleConfig::default();
    for r in [run_tmle_basic(&ds, &map, &cfg).unwrap(), run_tmle_adjusted(&ds, &map, &cfg).unwrap()] {
        assert!(r.converged);
        assert_psd(&r);
        let se = r.standard_errors();
        let at_center = log_or_at(&r, &map, &[0.0, 0.0], 1.0, 0.05).unwrap();
        assert!((at_center.log_or - r.beta_hat[0]).abs() < 1e-12);
        assert!((at_center.se - se[0]).abs() < 1e-12);

        let t = 1.7;
        let f = [1.0, t - 1.0];
        let n = r.n as f64;
        let var: f64 = (0..2)
            .flat_map(|a| (0..2).map(move |b| (a, b)))
            .map(|(a, b)| f[a] * f[b] * r.if_covariance[a][b] / n)
            .sum();
        let point = log_or_at(&r, &map, &[0.2, -0.4], t, 0.1).unwrap();
        let z = normal_quantile(0.1).unwrap();
        assert!((point.log_or - (r.beta_hat[0] + 0.7 * r.beta_hat[1])).abs() < 1e-10);
        assert!((point.se - var.sqrt()).abs() < 1e-10);
        assert!((point.ci_high - point.log_or - z * var.sqrt()).abs() < 1e-10);
    }
}

#[test]
fn ignorable_missingness_leaves_both_estimators_centered() {
    let cfg = DgpConfig {
        missingness: MissingnessForm::CompletelyAtRandom,
        ..DgpConfig::default()
    };
    let ds = simulate_dataset(2000, 15, &cfg).unwrap().dataset;
    let map = FeatureMap::time_shift(2, 1.0);
    let tmle = TmleConfig::default();
    for r in [run_tmle_basic(&ds, &map, &tmle).unwrap(), run_tmle_adjusted(&ds, &map, &tmle).unwrap()] {
        assert!(r.converged);
        for (b, se) in r.beta_hat.iter().zip(r.standard_errors()) {
            assert!((b - 0.5).abs() <= 3.0 * se, "{:?}: {b} (se {se})", r.estimator);
        }
    }
}

/// A small Monte Carlo with the strain regression given all covariates
/// replaced by a constant, leaving only the missingness model correct.
#[test]
fn adjusted_estimator_survives_a_misspecified_strain_regression() {
    let map = FeatureMap::time_shift(2, 1.0);
    let cfg = TmleConfig {
        mu_bar_constant: Some(0.5),
        ..TmleConfig::default()
    };
    let estimates: Vec<Vec<f64>> = (0..40)
        .filter_map(|seed| run_tmle_adjusted(&simulated(2000, 500 + seed), &map, &cfg).ok())
        .filter(|r| r.converged)
        .map(|r| r.beta_hat)
        .collect();
    let m = estimates.len() as f64;
    assert!(m >= 30.0);
    for k in 0..2 {
        let mean = estimates.iter().map(|b| b[k]).sum::<f64>() / m;
        let sd = (estimates.iter().map(|b| (b[k] - mean).powi(2)).sum::<f64>() / (m - 1.0)).sqrt();
        assert!((mean - 0.5).abs() <= 3.0 * sd / m.sqrt() + 0.05, "coef {k}: mean {mean}, sd {sd}");
    }
}

proptest! {
    #[test]
    fn clever_covariate_is_variance_orthogonal(p in 0.01f64..0.99, s1 in 1e-3f64..0.25, s0 in 1e-3f64..0.25) {
        let h1 = clever_covariate(true, s1, s0, p).unwrap();
        let h0 = clever_covariate(false, s1, s0, p).unwrap();
        prop_assert!((p * s1 * h1 + (1.0 - p) * s0 * h0).abs() < 1e-14);
        prop_assert!((h1 - h0 - 1.0).abs() < 1e-14);
    }
}
