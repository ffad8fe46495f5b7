//! Average linear functionals `β₀ = E[m(z, γ₀)]` of a conditional expectation.
//!
//! Each functional defines `m(z, γ)`, its action on the basis
//! `v(z) = (m(z, p_k) − m(z, 0))_k`, and how the Riesz representer enters the
//! doubly robust correction term.
//!
//! Conventions for the missing-data mean: the covariate slot holds `w`, `y` is
//! `a·Y`, and every nuisance is a function of `w` only. `γ` stands for
//! `γ(1, w)` and the Riesz fit stands for the inverse propensity `1/π(w)`; the
//! representer value at an observation is `a/π(w)`.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::basis::quadrature::gauss_legendre_on;
use crate::basis::{for_each_tensor_node, Dictionary, QuadratureSpec};
use crate::data::{Dataset, Observation};
use crate::error::{Error, Result};
use crate::simlab::DgpSpec;

/// Tolerance for the boundary-vanishing check on derivative weights.
pub const BOUNDARY_TOL: f64 = 1e-8;

/// A function of the covariates, used as a nuisance estimate or as the truth.
pub trait Nuisance: Sync {
    fn value(&self, x: &[f64]) -> Result<f64>;

    /// `∫ ω(x) f(x) dx` over `[0,1]^r`. The default uses a fixed composite
    /// Gauss–Legendre grid; series functions override it with the exact basis
    /// quadrature.
    fn integrate(&self, weight: &Weight, r: usize, _quad: Option<QuadratureSpec>) -> Result<f64> {
        generic_integral(|x| Ok(weight.omega(x) * self.value(x)?), r)
    }
}

fn generic_integral<F>(f: F, r: usize) -> Result<f64>
where
    F: Fn(&[f64]) -> Result<f64>,
{
    let (cells, nodes) = match r {
        1 => (32, 8),
        2 => (12, 6),
        _ => (6, 4),
    };
    let mut t = Vec::with_capacity(cells * nodes);
    let mut w = Vec::with_capacity(cells * nodes);
    for c in 0..cells {
        let (tc, wc) = gauss_legendre_on(nodes, c as f64 / cells as f64, (c + 1) as f64 / cells as f64);
        t.extend(tc);
        w.extend(wc);
    }
    let mut acc = 0.0;
    for_each_tensor_node(&t, &w, r, |x, wx| {
        acc += wx * f(x)?;
        Ok(())
    })?;
    Ok(acc)
}

/// `x ↦ p(x)'δ`.
#[derive(Clone, Copy)]
pub struct SeriesFunction<'a> {
    pub basis: &'a dyn Dictionary,
    pub coeffs: &'a [f64],
}

impl<'a> SeriesFunction<'a> {
    pub fn new(basis: &'a dyn Dictionary, coeffs: &'a [f64]) -> Self {
        SeriesFunction { basis, coeffs }
    }
}

impl Nuisance for SeriesFunction<'_> {
    fn value(&self, x: &[f64]) -> Result<f64> {
        Ok(self.basis.eval_sparse(x)?.dot(self.coeffs))
    }

    fn integrate(&self, weight: &Weight, _r: usize, quad: Option<QuadratureSpec>) -> Result<f64> {
        let quad = quad.unwrap_or_else(|| self.basis.default_quadrature());
        let v = self.basis.integrate(&|x| weight.omega(x), quad)?;
        Ok(v.iter().zip(self.coeffs).map(|(a, b)| a * b).sum())
    }
}

/// A closure as a nuisance.
pub struct FnNuisance<F>(pub F);

impl<F> Nuisance for FnNuisance<F>
where
    F: Fn(&[f64]) -> f64 + Sync,
{
    fn value(&self, x: &[f64]) -> Result<f64> {
        Ok((self.0)(x))
    }
}

/// The zero function.
#[derive(Debug, Clone, Copy, Default)]
pub struct Zero;

impl Nuisance for Zero {
    fn value(&self, _x: &[f64]) -> Result<f64> {
        Ok(0.0)
    }

    fn integrate(&self, _weight: &Weight, _r: usize, _quad: Option<QuadratureSpec>) -> Result<f64> {
        Ok(0.0)
    }
}

/// Univariate weight profiles `g(t)` on `[0,1]`, each integrating to one.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WeightProfile {
    /// `g ≡ 1`.
    Uniform,
    /// `g(t) = 6t(1 − t)`.
    PolynomialBump,
    /// `g(t) = 1 − cos(2πt)`.
    RaisedCosine,
}

impl WeightProfile {
    pub fn value(self, t: f64) -> f64 {
        match self {
            WeightProfile::Uniform => 1.0,
            WeightProfile::PolynomialBump => 6.0 * t * (1.0 - t),
            WeightProfile::RaisedCosine => 1.0 - (2.0 * PI * t).cos(),
        }
    }

    pub fn derivative(self, t: f64) -> f64 {
        match self {
            WeightProfile::Uniform => 0.0,
            WeightProfile::PolynomialBump => 6.0 - 12.0 * t,
            WeightProfile::RaisedCosine => 2.0 * PI * (2.0 * PI * t).sin(),
        }
    }
}

/// The weight `ω` of the integral functional `∫ ω(x) γ(x) dx`.
///
/// With `by_parts = false`, `ω(x) = Π_j g(x_j)`. With `by_parts = true` the
/// profile is the weight `v(x) = Π_j g(x_j)` of the weighted average
/// derivative `∫ v(x) ∂γ/∂x₁ dx`, and `ω = −∂v/∂x₁`; this requires `v` to
/// vanish where `x₁ ∈ {0, 1}`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Weight {
    pub profile: WeightProfile,
    #[serde(default)]
    pub by_parts: bool,
}

impl Weight {
    pub fn density(profile: WeightProfile) -> Self {
        Weight {
            profile,
            by_parts: false,
        }
    }

    /// Integration-by-parts form of the derivative weight `v = Π g(x_j)`.
    pub fn by_parts(profile: WeightProfile) -> Result<Self> {
        let w = Weight {
            profile,
            by_parts: true,
        };
        w.validate()?;
        Ok(w)
    }

    pub fn validate(&self) -> Result<()> {
        if self.by_parts {
            // v = g(x1)·Π g(x_j) vanishes on {x1 ∈ {0,1}} iff g(0) = g(1) = 0
            for t in [0.0, 1.0] {
                let v = self.profile.value(t);
                if v.abs() > BOUNDARY_TOL {
                    return Err(Error::InvalidSpec(format!(
                        "derivative weight {:?} is {v} at x1 = {t}; it must vanish on the boundary",
                        self.profile
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn omega(&self, x: &[f64]) -> f64 {
        let rest: f64 = x[1..].iter().map(|&t| self.profile.value(t)).product();
        let first = if self.by_parts {
            -self.profile.derivative(x[0])
        } else {
            self.profile.value(x[0])
        };
        first * rest
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FunctionalKind {
    Ecc,
    MissingDataMean,
    WeightedAvgDerivative,
    PartiallyLinearProjection,
}

impl std::str::FromStr for FunctionalKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ecc" => Ok(FunctionalKind::Ecc),
            "missing_data_mean" | "missing" | "md" => Ok(FunctionalKind::MissingDataMean),
            "weighted_avg_derivative" | "avg_derivative" | "ad" => Ok(FunctionalKind::WeightedAvgDerivative),
            "partially_linear_projection" | "partially_linear" | "pl" => Ok(FunctionalKind::PartiallyLinearProjection),
            other => Err(Error::Config(format!("unknown functional `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum FunctionalSpec {
    /// Expected conditional covariance, `m(z, γ) = a(y − γ(x))`.
    Ecc,
    /// Mean with data missing at random, `m(z, γ) = γ(1, w)`.
    MissingDataMean,
    /// `m(γ) = ∫ ω(x) γ(x) dx`.
    WeightedAvgDerivative {
        weight: Weight,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        nodes_per_cell: Option<usize>,
    },
    /// Handled by its own estimator; the generic operations reject it.
    PartiallyLinearProjection,
}

impl FunctionalSpec {
    pub fn weighted_avg_derivative(weight: Weight) -> Self {
        FunctionalSpec::WeightedAvgDerivative {
            weight,
            nodes_per_cell: None,
        }
    }

    pub fn kind(&self) -> FunctionalKind {
        match self {
            FunctionalSpec::Ecc => FunctionalKind::Ecc,
            FunctionalSpec::MissingDataMean => FunctionalKind::MissingDataMean,
            FunctionalSpec::WeightedAvgDerivative { .. } => FunctionalKind::WeightedAvgDerivative,
            FunctionalSpec::PartiallyLinearProjection => FunctionalKind::PartiallyLinearProjection,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            FunctionalSpec::WeightedAvgDerivative { weight, nodes_per_cell } => {
                if *nodes_per_cell == Some(0) {
                    return Err(Error::InvalidSpec("nodes_per_cell must be positive".into()));
                }
                weight.validate()
            }
            _ => Ok(()),
        }
    }

    fn unsupported(&self) -> Error {
        Error::Unsupported("the partially linear projection has its own estimator".into())
    }

    fn quad(&self, basis: &dyn Dictionary) -> QuadratureSpec {
        match self {
            FunctionalSpec::WeightedAvgDerivative {
                nodes_per_cell: Some(q),
                ..
            } => QuadratureSpec { nodes_per_cell: *q },
            _ => basis.default_quadrature(),
        }
    }

    /// True when `m(z, γ)` does not depend on `z`.
    pub fn ignores_z(&self) -> bool {
        matches!(self, FunctionalSpec::WeightedAvgDerivative { .. })
    }

    /// Checks kind-specific conventions on one observation.
    pub fn check_observation(&self, z: &Observation<'_>) -> Result<()> {
        if let FunctionalSpec::MissingDataMean = self {
            let a = z.a();
            if a != 0.0 && a != 1.0 {
                return Err(Error::InvalidSpec(format!("missing-data indicator must be 0 or 1, got {a}")));
            }
        }
        Ok(())
    }

    /// `m(z, γ)`.
    pub fn m_eval(&self, z: &Observation<'_>, gamma: &dyn Nuisance) -> Result<f64> {
        match self {
            FunctionalSpec::Ecc => Ok(z.a() * (z.y - gamma.value(z.x)?)),
            FunctionalSpec::MissingDataMean => gamma.value(z.x),
            FunctionalSpec::WeightedAvgDerivative { weight, nodes_per_cell } => gamma.integrate(
                weight,
                z.x.len(),
                nodes_per_cell.map(|q| QuadratureSpec { nodes_per_cell: q }),
            ),
            FunctionalSpec::PartiallyLinearProjection => Err(self.unsupported()),
        }
    }

    /// `v(z) = (m(z, p_k) − m(z, 0))_k`.
    pub fn v_eval(&self, z: &Observation<'_>, basis: &dyn Dictionary) -> Result<Vec<f64>> {
        match self {
            FunctionalSpec::Ecc => {
                let mut p = basis.eval(z.x)?;
                let a = z.a();
                p.iter_mut().for_each(|v| *v *= -a);
                Ok(p)
            }
            FunctionalSpec::MissingDataMean => basis.eval(z.x),
            FunctionalSpec::WeightedAvgDerivative { weight, .. } => {
                basis.integrate(&|x| weight.omega(x), self.quad(basis))
            }
            FunctionalSpec::PartiallyLinearProjection => Err(self.unsupported()),
        }
    }

    /// `(1/|idx|) Σ_{i ∈ idx} v(z_i)`.
    pub fn riesz_moment(&self, basis: &dyn Dictionary, data: &Dataset, idx: &[usize]) -> Result<Vec<f64>> {
        if idx.is_empty() {
            return Err(Error::EmptyInput("riesz moment over an empty index set".into()));
        }
        let k = basis.k();
        match self {
            FunctionalSpec::Ecc | FunctionalSpec::MissingDataMean => {
                let mut h = vec![0.0; k];
                let mut row = Default::default();
                for &i in idx {
                    let z = data.obs(i);
                    basis.eval_sparse_into(z.x, &mut row)?;
                    let scale = if let FunctionalSpec::Ecc = self { -z.a() } else { 1.0 };
                    for (&j, &v) in row.idx.iter().zip(&row.val) {
                        h[j] += scale * v;
                    }
                }
                let n = idx.len() as f64;
                h.iter_mut().for_each(|v| *v /= n);
                Ok(h)
            }
            FunctionalSpec::WeightedAvgDerivative { .. } => self.v_eval(&data.obs(idx[0]), basis),
            FunctionalSpec::PartiallyLinearProjection => Err(self.unsupported()),
        }
    }

    /// Weight of an observation in the gram matrices: `a` for the missing-data
    /// mean (only the `a = 1` block is active), one otherwise.
    pub fn design_weight(&self, z: &Observation<'_>) -> f64 {
        match self {
            FunctionalSpec::MissingDataMean => z.a(),
            _ => 1.0,
        }
    }

    /// Representer value at `z` given a fitted `α`.
    pub fn riesz_value(&self, z: &Observation<'_>, alpha: &dyn Nuisance) -> Result<f64> {
        match self {
            FunctionalSpec::MissingDataMean => {
                if z.a() == 0.0 {
                    Ok(0.0)
                } else {
                    Ok(z.a() * alpha.value(z.x)?)
                }
            }
            FunctionalSpec::PartiallyLinearProjection => Err(self.unsupported()),
            _ => alpha.value(z.x),
        }
    }

    /// `y − γ(x)`; for the missing-data mean this is only used multiplied by `a`.
    pub fn residual(&self, z: &Observation<'_>, gamma: &dyn Nuisance) -> Result<f64> {
        Ok(z.y - gamma.value(z.x)?)
    }

    /// True representer `α₀` at `z` under a known data-generating process.
    pub fn oracle_alpha(&self, dgp: &DgpSpec, z: &Observation<'_>) -> Result<f64> {
        let missing = |what: &str| Error::Unsupported(format!("data-generating process has no {what}"));
        match self {
            FunctionalSpec::Ecc => Ok(-dgp.mean_a(z.x).ok_or_else(|| missing("E[a|x]"))?),
            FunctionalSpec::MissingDataMean => {
                let pi = dgp.propensity(z.x).ok_or_else(|| missing("propensity score"))?;
                Ok(z.a() / pi)
            }
            FunctionalSpec::WeightedAvgDerivative { weight, .. } => {
                let f0 = dgp.density(z.x).ok_or_else(|| missing("covariate density"))?;
                Ok(weight.omega(z.x) / f0)
            }
            FunctionalSpec::PartiallyLinearProjection => Err(self.unsupported()),
        }
    }
}

pub fn oracle_alpha(f: &FunctionalSpec, dgp: &DgpSpec, z: &Observation<'_>) -> Result<f64> {
    f.oracle_alpha(dgp, z)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::basis::{Basis, BasisSpec};

    fn bump() -> FunctionalSpec {
        FunctionalSpec::weighted_avg_derivative(Weight::density(WeightProfile::PolynomialBump))
    }

    #[test]
    fn m_eval_examples() {
        let one = FnNuisance(|_: &[f64]| 1.0);
        let z = Observation::new(3.0, &[2.0], &[0.4]);
        assert_eq!(FunctionalSpec::Ecc.m_eval(&z, &one).unwrap(), 4.0);

        let ident = FnNuisance(|x: &[f64]| x[0]);
        let z = Observation::new(0.0, &[1.0], &[0.3]);
        assert!((FunctionalSpec::MissingDataMean.m_eval(&z, &ident).unwrap() - 0.3).abs() < 1e-15);

        let c = FnNuisance(|_: &[f64]| 2.5);
        let z = Observation::new(0.0, &[0.0], &[0.9]);
        assert!((bump().m_eval(&z, &c).unwrap() - 2.5).abs() < 1e-13);

        assert!(matches!(
            FunctionalSpec::PartiallyLinearProjection.m_eval(&z, &c),
            Err(Error::Unsupported(_))
        ));
    }

    #[test]
    fn v_eval_examples() {
        let haar = Basis::new(BasisSpec::haar(1, 2)).unwrap();
        let z = Observation::new(1.0, &[3.0], &[0.2]);
        assert_eq!(FunctionalSpec::Ecc.v_eval(&z, &haar).unwrap(), vec![-3.0, 0.0]);

        let constant = Basis::new(BasisSpec::haar(1, 1)).unwrap();
        for a in [0.0, 1.0] {
            let av = [a];
            let z = Observation::new(0.0, &av, &[0.7]);
            assert_eq!(FunctionalSpec::MissingDataMean.v_eval(&z, &constant).unwrap(), vec![1.0]);
        }

        let flat = FunctionalSpec::weighted_avg_derivative(Weight::density(WeightProfile::Uniform));
        for x in [0.1, 0.6] {
            let xv = [x];
            let z = Observation::new(x, &xv, &xv);
            let v = flat.v_eval(&z, &haar).unwrap();
            assert!((v[0] - 0.5).abs() < 1e-15 && (v[1] - 0.5).abs() < 1e-15);
        }
    }

    #[test]
    fn by_parts_weight() {
        let w = Weight::by_parts(WeightProfile::PolynomialBump).unwrap();
        assert!((w.omega(&[0.25]) - (12.0 * 0.25 - 6.0)).abs() < 1e-15);
        assert!(Weight::by_parts(WeightProfile::Uniform).is_err());
        assert!(Weight::by_parts(WeightProfile::RaisedCosine).is_ok());
        // ∫ (12x − 6) x² dx = 1
        let f = FunctionalSpec::weighted_avg_derivative(w);
        let sq = FnNuisance(|x: &[f64]| x[0] * x[0]);
        let z = Observation::new(0.0, &[0.0], &[0.5]);
        assert!((f.m_eval(&z, &sq).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn series_integral_matches_generic() {
        let b = Basis::new(BasisSpec::new(1, 2, 4)).unwrap();
        let coeffs: Vec<f64> = (0..b.k()).map(|k| (k as f64 * 0.7).sin()).collect();
        let s = SeriesFunction::new(&b, &coeffs);
        let w = Weight::density(WeightProfile::PolynomialBump);
        let exact = s.integrate(&w, 1, None).unwrap();
        let generic = generic_integral(|x| Ok(w.omega(x) * s.value(x)?), 1).unwrap();
        assert!((exact - generic).abs() < 1e-12);
    }

    #[test]
    fn missing_data_indicator_checked() {
        let z = Observation::new(0.0, &[2.0], &[0.5]);
        assert!(FunctionalSpec::MissingDataMean.check_observation(&z).is_err());
        assert!(FunctionalSpec::Ecc.check_observation(&z).is_ok());
    }

    #[test]
    fn spec_json_shape() {
        let f = FunctionalSpec::weighted_avg_derivative(Weight::by_parts(WeightProfile::PolynomialBump).unwrap());
        let js = serde_json::to_string(&f).unwrap();
        assert_eq!(
            js,
            r#"{"kind":"weighted_avg_derivative","weight":{"profile":"polynomial_bump","by_parts":true}}"#
        );
        let back: FunctionalSpec = serde_json::from_str(&js).unwrap();
        assert_eq!(back, f);
    }
}
