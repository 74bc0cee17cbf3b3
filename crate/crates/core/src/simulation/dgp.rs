//! Case-only data-generating process with a binary post-vaccination
//! covariate `W_T` that drives both the strain and its missingness.
//!
//! The marginal strain law satisfies the partially linear model with
//! `f(w, t) = (1, t - 1)`; the law given `W_T = 1` is obtained by inverting
//! the mixture over `W_T`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal, Weibull};
use serde::{Deserialize, Serialize};

use crate::data::{CaseOnlyDataset, Observation};
use crate::error::{Error, Result};
use crate::plogit::expit;

/// Bound on rejection and resampling loops.
pub const MAX_DRAWS: usize = 10_000;

/// Correlation of the baseline proposal law.
pub const BASELINE_CORRELATION: f64 = -0.5;

/// How `-A - A W_T / 2` enters the strain-observation probability.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MissingnessForm {
    /// `0.05 + 0.95 expit(1.5 - 2 W_T + (w1 + w2 + t - 1) / 2 - A - A W_T / 2)`.
    #[default]
    InsideExpit,
    /// The trailing terms outside the expit, clamped to `[0, 1]`.
    OutsideClamped,
    /// Every strain observed independently with probability 1/2.
    CompletelyAtRandom,
}

/// How the vaccine term and the covariate term combine in
/// `P(J = 1 | W_T = 0, ...)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StrainBaselineForm {
    #[default]
    Additive,
    Multiplicative,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DgpConfig {
    #[serde(default = "default_beta")]
    pub beta_true: [f64; 2],
    #[serde(default)]
    pub missingness: MissingnessForm,
    #[serde(default)]
    pub strain_baseline: StrainBaselineForm,
}

fn default_beta() -> [f64; 2] {
    [0.5, 0.5]
}

impl Default for DgpConfig {
    fn default() -> Self {
        Self {
            beta_true: default_beta(),
            missingness: MissingnessForm::default(),
            strain_baseline: StrainBaselineForm::default(),
        }
    }
}

impl DgpConfig {
    pub fn validate(&self) -> Result<()> {
        if self.beta_true.iter().any(|b| !b.is_finite()) {
            return Err(Error::Config("beta_true must be finite".into()));
        }
        Ok(())
    }
}

/// Draws `(w1, w2)` from a mean-zero bivariate normal with unit variances and
/// correlation -0.5, rejected until both lie in `(-1, 1)`.
pub fn sample_baseline<R: Rng + ?Sized>(rng: &mut R) -> Result<(f64, f64)> {
    let rho = BASELINE_CORRELATION;
    let c = (1.0 - rho * rho).sqrt();
    for _ in 0..MAX_DRAWS {
        let z1: f64 = StandardNormal.sample(rng);
        let z2: f64 = StandardNormal.sample(rng);
        let (w1, w2) = (z1, rho * z1 + c * z2);
        if w1.abs() < 1.0 && w2.abs() < 1.0 {
            return Ok((w1, w2));
        }
    }
    Err(Error::IllDefined("baseline rejection sampler exhausted".into()))
}

pub fn propensity(w1: f64, w2: f64) -> f64 {
    expit(0.75 * (w1 + w2))
}

/// Weibull scale of the infection time.
pub fn time_scale(w1: f64, w2: f64) -> f64 {
    1.0 / (0.1 * (w1 + w2 - 0.5)).exp()
}

pub fn post_covariate_probability(w1: f64, w2: f64, a: bool) -> f64 {
    let a = a as u8 as f64;
    0.1 + 0.85 * expit(-1.0 + w1 / 2.0 + w2 / 2.0 + 2.5 * a + a * (w1 - w2) / 4.0 - 0.5)
}

/// `P(J = 1 | T, A, W)` under the partially linear model.
pub fn marginal_strain_probability(w1: f64, w2: f64, a: bool, t: f64, beta: [f64; 2]) -> f64 {
    let a = a as u8 as f64;
    expit(-0.75 + a * (beta[0] + beta[1] * (t - 1.0)) + (w1 + w2 + t - 1.0) / 2.0)
}

pub fn strain_probability_wt0(w1: f64, w2: f64, a: bool, t: f64, form: StrainBaselineForm) -> f64 {
    let a = a as u8 as f64;
    let vaccine = a * (0.3 + (t - 1.0) / 6.0 + w1 / 2.0);
    let covariate = (w1 + w2 + t - 1.0) / 2.0;
    match form {
        StrainBaselineForm::Additive => expit(-1.3 + vaccine + covariate),
        StrainBaselineForm::Multiplicative => expit(-1.3 + vaccine * covariate),
    }
}

/// `(P(J = 1 | W_T = 0, ...), P(J = 1 | W_T = 1, ...))`; the second solves
/// `p1 p_wt + p0 (1 - p_wt) = p_marginal`.
pub fn invert_strain_model(w1: f64, w2: f64, a: bool, t: f64, cfg: &DgpConfig) -> Result<(f64, f64)> {
    let p_wt = post_covariate_probability(w1, w2, a);
    let p0 = strain_probability_wt0(w1, w2, a, t, cfg.strain_baseline);
    let p = marginal_strain_probability(w1, w2, a, t, cfg.beta_true);
    let p1 = (p - p0 * (1.0 - p_wt)) / p_wt;
    if !(0.0..=1.0).contains(&p1) {
        return Err(Error::InvalidProbability(p1));
    }
    Ok((p0, p1))
}

pub fn observation_probability(w1: f64, w2: f64, a: bool, t: f64, wt: bool, form: MissingnessForm) -> f64 {
    let (a, wt) = (a as u8 as f64, wt as u8 as f64);
    let base = 1.5 - 2.0 * wt + (w1 + w2 + t - 1.0) / 2.0;
    match form {
        MissingnessForm::InsideExpit => 0.05 + 0.95 * expit(base - a - a * wt / 2.0),
        MissingnessForm::OutsideClamped => {
            (0.05 + 0.95 * expit(base) - a - a * wt / 2.0).clamp(0.0, 1.0)
        }
        MissingnessForm::CompletelyAtRandom => 0.5,
    }
}

/// One simulated case with its latent strain.
#[derive(Debug, Clone, PartialEq)]
pub struct SimulatedCase {
    pub observation: Observation,
    pub latent_j: bool,
    /// Draws discarded because the strain inversion left `[0, 1]`.
    pub inversion_failures: usize,
}

/// Draws one case; individuals whose inverted strain probability is not a
/// probability are redrawn from scratch.
pub fn sample_case<R: Rng + ?Sized>(rng: &mut R, cfg: &DgpConfig, row: usize) -> Result<SimulatedCase> {
    let mut failures = 0;
    for _ in 0..MAX_DRAWS {
        let (w1, w2) = sample_baseline(rng)?;
        let a = rng.random::<f64>() < propensity(w1, w2);
        let weibull = Weibull::new(time_scale(w1, w2), 3.0)
            .map_err(|e| Error::IllDefined(format!("infection-time law: {e}")))?;
        let t: f64 = weibull.sample(rng);
        let wt = rng.random::<f64>() < post_covariate_probability(w1, w2, a);
        let (p0, p1) = match invert_strain_model(w1, w2, a, t, cfg) {
            Ok(p) => p,
            Err(_) => {
                failures += 1;
                continue;
            }
        };
        let j = rng.random::<f64>() < if wt { p1 } else { p0 };
        let delta = rng.random::<f64>() < observation_probability(w1, w2, a, t, wt, cfg.missingness);
        let observation = Observation::new(
            row,
            vec![w1, w2],
            a,
            t,
            vec![wt as u8 as f64],
            delta,
            delta.then_some(j),
        )?;
        return Ok(SimulatedCase {
            observation,
            latent_j: j,
            inversion_failures: failures,
        });
    }
    Err(Error::IllDefined("strain inversion failed on every draw".into()))
}

/// A simulated dataset with the latent strains retained.
#[derive(Debug, Clone, PartialEq)]
pub struct SimulatedData {
    pub dataset: CaseOnlyDataset,
    pub latent_j: Vec<bool>,
    pub inversion_failures: usize,
}

impl SimulatedData {
    pub fn missing_fraction(&self) -> f64 {
        let missing = self.dataset.rows().iter().filter(|o| !o.delta).count();
        missing as f64 / self.dataset.n() as f64
    }

    /// The same cases with every strain revealed and `W_T` dropped.
    pub fn fully_observed(&self) -> CaseOnlyDataset {
        let rows = self
            .dataset
            .rows()
            .iter()
            .zip(&self.latent_j)
            .map(|(o, &j)| Observation {
                w_post: Vec::new(),
                delta: true,
                j: Some(j),
                ..o.clone()
            })
            .collect();
        CaseOnlyDataset::new(rows).expect("nonempty")
    }
}

pub fn simulate_dataset(n: usize, seed: u64, cfg: &DgpConfig) -> Result<SimulatedData> {
    if n == 0 {
        return Err(Error::InvalidArgument("n must be positive".into()));
    }
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut rows = Vec::with_capacity(n);
    let mut latent = Vec::with_capacity(n);
    let mut failures = 0;
    for i in 0..n {
        let c = sample_case(&mut rng, cfg, i + 1)?;
        failures += c.inversion_failures;
        latent.push(c.latent_j);
        rows.push(c.observation);
    }
    Ok(SimulatedData {
        dataset: CaseOnlyDataset::new(rows)?,
        latent_j: latent,
        inversion_failures: failures,
    })
}
