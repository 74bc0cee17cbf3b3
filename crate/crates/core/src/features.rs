//! The log odds-ratio feature map `f(w, t)` and the spline bases used by the
//! nuisance regressions.

use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Functional form of the log odds ratio, `log OR(w, t) = beta' f(w, t)`.
///
/// Coordinates index the vector `(w_1, .., w_d, t)`, so `d` refers to time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum FeatureKind {
    /// `f = 1`, a constant relative efficacy.
    Intercept,
    /// `f = (1, t - center)`.
    TimeShift {
        #[serde(default = "default_center")]
        center: f64,
    },
    /// `f = (1, x_k for k in coords)`.
    MainTerms { coords: Vec<usize> },
    /// `f = (x_k for k in coords)`, for features already evaluated by the user
    /// and stored as baseline columns.
    Columns { coords: Vec<usize> },
}

fn default_center() -> f64 {
    1.0
}

impl Default for FeatureKind {
    fn default() -> Self {
        FeatureKind::TimeShift { center: 1.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureMap {
    pub kind: FeatureKind,
    /// Baseline dimension the map was built for.
    pub d: usize,
}

impl FeatureMap {
    pub fn new(kind: FeatureKind, d: usize) -> Result<Self> {
        let coords = match &kind {
            FeatureKind::MainTerms { coords } | FeatureKind::Columns { coords } => coords.as_slice(),
            _ => &[],
        };
        if let Some(&bad) = coords.iter().find(|&&k| k > d) {
            return Err(Error::DimensionMismatch {
                expected: d + 1,
                got: bad + 1,
            });
        }
        if matches!(&kind, FeatureKind::Columns { coords } if coords.is_empty()) {
            return Err(Error::InvalidArgument("feature map has no columns".into()));
        }
        Ok(Self { kind, d })
    }

    pub fn intercept(d: usize) -> Self {
        Self {
            kind: FeatureKind::Intercept,
            d,
        }
    }

    pub fn time_shift(d: usize, center: f64) -> Self {
        Self {
            kind: FeatureKind::TimeShift { center },
            d,
        }
    }

    /// Output dimension `s`.
    pub fn dim(&self) -> usize {
        match &self.kind {
            FeatureKind::Intercept => 1,
            FeatureKind::TimeShift { .. } => 2,
            FeatureKind::MainTerms { coords } => coords.len() + 1,
            FeatureKind::Columns { coords } => coords.len(),
        }
    }

    pub fn eval(&self, w: &[f64], t: f64) -> Result<Vec<f64>> {
        if w.len() != self.d {
            return Err(Error::DimensionMismatch {
                expected: self.d,
                got: w.len(),
            });
        }
        let x = |k: usize| if k == self.d { t } else { w[k] };
        Ok(match &self.kind {
            FeatureKind::Intercept => vec![1.0],
            FeatureKind::TimeShift { center } => vec![1.0, t - center],
            FeatureKind::MainTerms { coords } => std::iter::once(1.0)
                .chain(coords.iter().map(|&k| x(k)))
                .collect(),
            FeatureKind::Columns { coords } => coords.iter().map(|&k| x(k)).collect(),
        })
    }

    /// Evaluates the map at every `(w, t)` pair; returns one row per input.
    pub fn eval_rows<'a>(
        &self,
        inputs: impl IntoIterator<Item = (&'a [f64], f64)>,
    ) -> Result<Vec<Vec<f64>>> {
        inputs.into_iter().map(|(w, t)| self.eval(w, t)).collect()
    }
}

/// Spectrum of the empirical second-moment matrix `(1/n) sum f f'`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GramReport {
    pub min_eigenvalue: f64,
    pub max_eigenvalue: f64,
    pub condition_number: f64,
}

impl GramReport {
    pub fn invertible(&self) -> bool {
        self.min_eigenvalue > 1e-8 && self.condition_number.is_finite()
    }
}

pub fn gram_report(features: &[Vec<f64>]) -> GramReport {
    let s = features.first().map_or(0, Vec::len);
    let n = features.len().max(1) as f64;
    let mut g = DMatrix::<f64>::zeros(s, s);
    for f in features {
        for a in 0..s {
            for b in 0..s {
                g[(a, b)] += f[a] * f[b] / n;
            }
        }
    }
    let eig = SymmetricEigen::new(g);
    let min = eig.eigenvalues.min();
    let max = eig.eigenvalues.max();
    GramReport {
        min_eigenvalue: min,
        max_eigenvalue: max,
        condition_number: if min > 0.0 { max / min } else { f64::INFINITY },
    }
}

/// How to build a nuisance basis from data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BasisSpec {
    #[serde(default = "default_true")]
    pub interactions: bool,
    /// Empirical quantile levels at which hinge knots are placed.
    #[serde(default = "default_knot_quantiles")]
    pub knot_quantiles: Vec<f64>,
}

fn default_true() -> bool {
    true
}

fn default_knot_quantiles() -> Vec<f64> {
    vec![0.1, 0.3, 0.5, 0.7, 0.9]
}

impl Default for BasisSpec {
    fn default() -> Self {
        Self {
            interactions: true,
            knot_quantiles: default_knot_quantiles(),
        }
    }
}

/// Expansion of an input vector into an intercept, main terms, pairwise
/// products and per-coordinate hinges `(x_k - knot)_+`.
///
/// Column order: intercept, main terms of active coordinates, products of
/// active pairs `(k, l)` with `k < l` in lexicographic order, then hinges
/// grouped by coordinate in ascending knot order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Basis {
    input_dim: usize,
    active: Vec<usize>,
    interactions: bool,
    knots: Vec<Vec<f64>>,
}

impl Basis {
    /// `knots[k]` lists the hinge knots of active coordinate `k`.
    pub fn new(
        input_dim: usize,
        active: Vec<usize>,
        interactions: bool,
        knots: Vec<Vec<f64>>,
    ) -> Result<Self> {
        if knots.len() != active.len() {
            return Err(Error::DimensionMismatch {
                expected: active.len(),
                got: knots.len(),
            });
        }
        if let Some(&bad) = active.iter().find(|&&k| k >= input_dim) {
            return Err(Error::DimensionMismatch {
                expected: input_dim,
                got: bad + 1,
            });
        }
        Ok(Self {
            input_dim,
            active,
            interactions,
            knots,
        })
    }

    /// Main terms only, no hinges.
    pub fn main_terms(input_dim: usize) -> Self {
        Self {
            input_dim,
            active: (0..input_dim).collect(),
            interactions: false,
            knots: vec![Vec::new(); input_dim],
        }
    }

    /// Intercept column only.
    pub fn intercept_only(input_dim: usize) -> Self {
        Self {
            input_dim,
            active: Vec::new(),
            interactions: false,
            knots: Vec::new(),
        }
    }

    /// Builds a basis from sample inputs. Constant coordinates are dropped;
    /// knots sit at the requested empirical quantiles, deduplicated, and only
    /// strictly inside the observed range so no hinge is constant or a copy of
    /// its main term. Two-valued coordinates get no hinges.
    pub fn from_data(spec: &BasisSpec, inputs: &[Vec<f64>]) -> Result<Self> {
        let first = inputs.first().ok_or(Error::EmptyDataset)?;
        let input_dim = first.len();
        let mut active = Vec::new();
        let mut knots = Vec::new();
        for k in 0..input_dim {
            let mut col: Vec<f64> = inputs.iter().map(|x| x[k]).collect();
            col.sort_by(|a, b| a.total_cmp(b));
            let (lo, hi) = (col[0], col[col.len() - 1]);
            if hi - lo <= 1e-12 * (1.0 + lo.abs().max(hi.abs())) {
                continue;
            }
            let mut ks: Vec<f64> = spec
                .knot_quantiles
                .iter()
                .map(|&p| quantile_sorted(&col, p))
                .filter(|&q| q > lo && q < hi)
                .collect();
            ks.dedup_by(|a, b| (*a - *b).abs() <= 1e-12);
            // a hinge on a two-valued coordinate is a multiple of its main term
            let two_valued = col.iter().all(|&v| v == lo || v == hi);
            if two_valued {
                ks.clear();
            }
            active.push(k);
            knots.push(ks);
        }
        Ok(Self {
            input_dim,
            active,
            interactions: spec.interactions,
            knots,
        })
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    /// Expanded dimension `p`, including the intercept.
    pub fn dim(&self) -> usize {
        let m = self.active.len();
        let pairs = if self.interactions { m * (m.saturating_sub(1)) / 2 } else { 0 };
        1 + m + pairs + self.knots.iter().map(Vec::len).sum::<usize>()
    }

    pub fn eval(&self, x: &[f64]) -> Result<Vec<f64>> {
        let mut out = Vec::with_capacity(self.dim());
        self.eval_into(x, &mut out)?;
        Ok(out)
    }

    pub fn eval_into(&self, x: &[f64], out: &mut Vec<f64>) -> Result<()> {
        if x.len() != self.input_dim {
            return Err(Error::DimensionMismatch {
                expected: self.input_dim,
                got: x.len(),
            });
        }
        out.clear();
        out.push(1.0);
        out.extend(self.active.iter().map(|&k| x[k]));
        if self.interactions {
            for (i, &k) in self.active.iter().enumerate() {
                for &l in &self.active[i + 1..] {
                    out.push(x[k] * x[l]);
                }
            }
        }
        for (&k, ks) in self.active.iter().zip(&self.knots) {
            out.extend(ks.iter().map(|&kn| (x[k] - kn).max(0.0)));
        }
        Ok(())
    }
}

/// Linear-interpolation quantile of sorted data (the common "type 7" rule).
pub fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    let n = sorted.len();
    if n == 1 {
        return sorted[0];
    }
    let h = (n - 1) as f64 * p.clamp(0.0, 1.0);
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(n - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn intercept_map_is_constant() {
        let f = FeatureMap::intercept(2);
        assert_eq!(f.eval(&[0.3, -0.7], 4.2).unwrap(), vec![1.0]);
    }

    #[test]
    fn time_shift_map() {
        let f = FeatureMap::time_shift(2, 1.0);
        assert_eq!(f.eval(&[0.0, 0.0], 1.0).unwrap(), vec![1.0, 0.0]);
        assert_eq!(f.eval(&[0.0, 0.0], 2.5).unwrap(), vec![1.0, 1.5]);
    }

    #[test]
    fn feature_dimension_checked() {
        let f = FeatureMap::time_shift(2, 1.0);
        assert!(matches!(
            f.eval(&[0.0], 1.0),
            Err(Error::DimensionMismatch { expected: 2, got: 1 })
        ));
        assert!(FeatureMap::new(FeatureKind::MainTerms { coords: vec![3] }, 2).is_err());
    }

    #[test]
    fn main_terms_map_includes_time_coordinate() {
        let f = FeatureMap::new(FeatureKind::MainTerms { coords: vec![1, 2] }, 2).unwrap();
        assert_eq!(f.eval(&[0.5, -0.25], 3.0).unwrap(), vec![1.0, -0.25, 3.0]);
        assert_eq!(f.dim(), 3);
    }

    #[test]
    fn main_terms_basis() {
        let b = Basis::main_terms(2);
        assert_eq!(b.eval(&[0.2, -0.3]).unwrap(), vec![1.0, 0.2, -0.3]);
    }

    #[test]
    fn hinge_basis() {
        let b = Basis::new(1, vec![0], false, vec![vec![0.0]]).unwrap();
        assert_eq!(b.eval(&[0.5]).unwrap(), vec![1.0, 0.5, 0.5]);
        assert_eq!(b.eval(&[-0.5]).unwrap(), vec![1.0, -0.5, 0.0]);
    }

    #[test]
    fn basis_column_order() {
        let b = Basis::new(3, vec![0, 1, 2], true, vec![vec![0.0], vec![], vec![1.0, 2.0]]).unwrap();
        let v = b.eval(&[1.0, 2.0, 3.0]).unwrap();
        assert_eq!(v, vec![1.0, 1.0, 2.0, 3.0, 2.0, 3.0, 6.0, 1.0, 2.0, 1.0]);
        assert_eq!(b.dim(), v.len());
    }

    #[test]
    fn from_data_drops_constant_and_binary_hinges() {
        let inputs: Vec<Vec<f64>> = (0..50)
            .map(|i| vec![(i % 2) as f64, 5.0, i as f64 / 10.0])
            .collect();
        let b = Basis::from_data(&BasisSpec::default(), &inputs).unwrap();
        // intercept, 2 main terms, 1 product, 5 hinges on the continuous coordinate
        assert_eq!(b.dim(), 1 + 2 + 1 + 5);
        let v = b.eval(&inputs[7]).unwrap();
        assert!(v.iter().all(|x| x.is_finite()));
    }

    #[test]
    fn quantile_matches_interpolation_rule() {
        let s = [1.0, 2.0, 3.0, 4.0];
        assert_eq!(quantile_sorted(&s, 0.5), 2.5);
        assert_eq!(quantile_sorted(&s, 0.0), 1.0);
        assert!((quantile_sorted(&s, 0.1) - 1.3).abs() < 1e-12);
    }

    #[test]
    fn gram_of_time_shift_is_well_conditioned() {
        let f = FeatureMap::time_shift(0, 1.0);
        let rows: Vec<Vec<f64>> = (1..=100)
            .map(|i| f.eval(&[], 0.5 + i as f64 / 100.0).unwrap())
            .collect();
        let g = gram_report(&rows);
        assert!(g.invertible());
        let constant: Vec<Vec<f64>> = (0..10).map(|_| f.eval(&[], 1.0).unwrap()).collect();
        assert!(!gram_report(&constant).invertible());
    }
}
