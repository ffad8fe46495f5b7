//! Data-generating processes with known `β₀`, a Monte Carlo replication
//! engine and rate sweeps.
//!
//! All built-in families draw `x ~ U[0,1]^r` and use trigonometric nuisances
//! of the index `x̄ = mean(x)`, except the average-derivative family which
//! depends on `x₁` only.

use std::f64::consts::PI;

use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::basis::{Basis, BasisSpec, Normalization};
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::estimators::{estimate, estimate_with_nuisances, EstimateResult, EstimatorKind, EstimatorOptions};
use crate::functionals::{FunctionalSpec, Nuisance, Weight, WeightProfile};
use crate::rng::{derive_seed, rng_from_seed};
use crate::splitting::SplitPlan;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DgpFamily {
    /// `a = sin(2πx̄) + σ_u u`, `y = cos(2πx̄) + ρu + σ_ε ε`, Gaussian noise.
    EccSmooth,
    /// As `EccSmooth` with `a = tanh(2 sin(2πx̄)) + σ_u u`, `u` uniform with
    /// unit variance, so `a` is bounded.
    EccBounded,
    /// `π₀(w) = 0.5 + c cos(2πw₁)`, `Y = w̄ + c sin(2πw̄) + σ_ε ε`, `y = aY`.
    MdSmooth,
    /// `y = x₁² + σ_ε ε`, derivative weight `6x₁(1 − x₁) Π_{j≥2} 6x_j(1 − x_j)`.
    AdQuadratic,
    /// `a = sin(2πx̄) + σ_u u`, `y = b·a + cos(2πx̄) + σ_ε ε`.
    PlSmooth,
}

impl DgpFamily {
    pub fn name(self) -> &'static str {
        match self {
            DgpFamily::EccSmooth => "ecc_smooth",
            DgpFamily::EccBounded => "ecc_bounded",
            DgpFamily::MdSmooth => "md_smooth",
            DgpFamily::AdQuadratic => "ad_quadratic",
            DgpFamily::PlSmooth => "pl_smooth",
        }
    }
}

impl std::str::FromStr for DgpFamily {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "ecc_smooth" => DgpFamily::EccSmooth,
            "ecc_bounded" => DgpFamily::EccBounded,
            "md_smooth" => DgpFamily::MdSmooth,
            "ad_quadratic" => DgpFamily::AdQuadratic,
            "pl_smooth" => DgpFamily::PlSmooth,
            other => return Err(Error::Config(format!("unknown data-generating process `{other}`"))),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DgpSpec {
    pub family: DgpFamily,
    pub r: usize,
    pub sigma_u: f64,
    pub sigma_e: f64,
    pub rho: f64,
    /// Amplitude of the propensity and outcome oscillations (missing data).
    pub amplitude: f64,
    /// Partially linear coefficient `b`.
    pub slope: f64,
    /// Intended Hölder orders of `γ₀` and `α₀`; documentation only, `None`
    /// for analytic functions.
    #[serde(default)]
    pub s_gamma: Option<f64>,
    #[serde(default)]
    pub s_alpha: Option<f64>,
}

impl DgpSpec {
    /// Family defaults: unit noise scales, `ρ = 0.5`, amplitude `0.35`, `b = 1`.
    pub fn new(family: DgpFamily, r: usize) -> Self {
        DgpSpec {
            family,
            r,
            sigma_u: 1.0,
            sigma_e: 1.0,
            rho: 0.5,
            amplitude: 0.35,
            slope: 1.0,
            s_gamma: None,
            s_alpha: None,
        }
    }

    pub fn named(name: &str, r: usize) -> Result<Self> {
        let d = DgpSpec::new(name.parse()?, r);
        d.validate()?;
        Ok(d)
    }

    pub fn validate(&self) -> Result<()> {
        if self.r == 0 {
            return Err(Error::InvalidSpec("r must be positive".into()));
        }
        for (name, v) in [("sigma_u", self.sigma_u), ("sigma_e", self.sigma_e)] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::InvalidSpec(format!("{name} must be finite and non-negative")));
            }
        }
        if !self.rho.is_finite() || !self.slope.is_finite() {
            return Err(Error::InvalidSpec("rho and slope must be finite".into()));
        }
        if self.family == DgpFamily::MdSmooth && !(0.0..=0.4).contains(&self.amplitude) {
            return Err(Error::InvalidSpec(
                "amplitude must lie in [0, 0.4] so that the propensity stays in [0.1, 0.9]".into(),
            ));
        }
        Ok(())
    }

    /// The functional this process is built for.
    pub fn functional(&self) -> FunctionalSpec {
        match self.family {
            DgpFamily::EccSmooth | DgpFamily::EccBounded => FunctionalSpec::Ecc,
            DgpFamily::MdSmooth => FunctionalSpec::MissingDataMean,
            DgpFamily::AdQuadratic => FunctionalSpec::weighted_avg_derivative(Weight {
                profile: WeightProfile::PolynomialBump,
                by_parts: true,
            }),
            DgpFamily::PlSmooth => FunctionalSpec::PartiallyLinearProjection,
        }
    }

    fn index(x: &[f64]) -> f64 {
        x.iter().sum::<f64>() / x.len() as f64
    }

    /// `E[a | x]` where `a` is a continuous regressor.
    pub fn mean_a(&self, x: &[f64]) -> Option<f64> {
        let s = (2.0 * PI * Self::index(x)).sin();
        match self.family {
            DgpFamily::EccSmooth | DgpFamily::PlSmooth => Some(s),
            DgpFamily::EccBounded => Some((2.0 * s).tanh()),
            _ => None,
        }
    }

    /// `π₀(w) = P(a = 1 | w)` for the missing-data family.
    pub fn propensity(&self, w: &[f64]) -> Option<f64> {
        match self.family {
            DgpFamily::MdSmooth => Some(0.5 + self.amplitude * (2.0 * PI * w[0]).cos()),
            _ => None,
        }
    }

    /// Density of `x`; uniform for every family.
    pub fn density(&self, _x: &[f64]) -> Option<f64> {
        Some(1.0)
    }

    /// `γ₀(x) = E[y | x]`; for the missing-data family, `E[Y | w]`.
    pub fn gamma0(&self, x: &[f64]) -> f64 {
        let t = Self::index(x);
        match self.family {
            DgpFamily::EccSmooth | DgpFamily::EccBounded => (2.0 * PI * t).cos(),
            DgpFamily::MdSmooth => t + self.amplitude * (2.0 * PI * t).sin(),
            DgpFamily::AdQuadratic => x[0] * x[0],
            DgpFamily::PlSmooth => self.slope * (2.0 * PI * t).sin() + (2.0 * PI * t).cos(),
        }
    }

    /// `α₀` in the convention of [`estimate_with_nuisances`]; `None` for the
    /// partially linear family.
    pub fn alpha0(&self, x: &[f64]) -> Option<f64> {
        match self.family {
            DgpFamily::EccSmooth | DgpFamily::EccBounded => self.mean_a(x).map(|m| -m),
            DgpFamily::MdSmooth => self.propensity(x).map(|p| 1.0 / p),
            DgpFamily::AdQuadratic => match self.functional() {
                FunctionalSpec::WeightedAvgDerivative { weight, .. } => Some(weight.omega(x) / self.density(x)?),
                _ => None,
            },
            DgpFamily::PlSmooth => None,
        }
    }

    /// Analytic `β₀`.
    pub fn true_beta(&self) -> f64 {
        match self.family {
            // Cov(a, y | x) = ρ σ_u² Var(u)
            DgpFamily::EccSmooth | DgpFamily::EccBounded => self.rho * self.sigma_u * self.sigma_u,
            // E[x̄] = 1/2 and sin(2πx̄) is odd about the symmetric point 1/2
            DgpFamily::MdSmooth => 0.5,
            // ∫ 6t(1 − t)·2t dt = 1
            DgpFamily::AdQuadratic => 1.0,
            DgpFamily::PlSmooth => self.slope,
        }
    }

    pub fn gamma_nuisance(&self) -> Truth<'_> {
        Truth {
            dgp: self,
            part: TruthPart::Gamma,
        }
    }

    pub fn alpha_nuisance(&self) -> Truth<'_> {
        Truth {
            dgp: self,
            part: TruthPart::Alpha,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum TruthPart {
    Gamma,
    Alpha,
}

/// `γ₀` or `α₀` of a process as a [`Nuisance`].
#[derive(Debug, Clone, Copy)]
pub struct Truth<'a> {
    dgp: &'a DgpSpec,
    part: TruthPart,
}

impl Nuisance for Truth<'_> {
    fn value(&self, x: &[f64]) -> Result<f64> {
        match self.part {
            TruthPart::Gamma => Ok(self.dgp.gamma0(x)),
            TruthPart::Alpha => self
                .dgp
                .alpha0(x)
                .ok_or_else(|| Error::Unsupported(format!("{} has no scalar representer", self.dgp.family.name()))),
        }
    }
}

/// An i.i.d. sample of size `n`, bitwise reproducible from `seed`.
pub fn generate(dgp: &DgpSpec, n: usize, seed: u64) -> Result<Dataset> {
    dgp.validate()?;
    if n == 0 {
        return Err(Error::InvalidSpec("n must be positive".into()));
    }
    let r = dgp.r;
    let mut rng = rng_from_seed(seed);
    let mut xs = vec![0.0; n * r];
    let mut ys = Vec::with_capacity(n);
    let mut as_ = Vec::with_capacity(n);
    let unit_uniform = 3f64.sqrt();
    for i in 0..n {
        let x = &mut xs[i * r..(i + 1) * r];
        x.iter_mut().for_each(|v| *v = rng.gen::<f64>());
        let x = &xs[i * r..(i + 1) * r];
        let e: f64 = rng.sample(StandardNormal);
        match dgp.family {
            DgpFamily::EccSmooth | DgpFamily::EccBounded | DgpFamily::PlSmooth => {
                let u: f64 = if dgp.family == DgpFamily::EccBounded {
                    rng.gen_range(-unit_uniform..unit_uniform)
                } else {
                    rng.sample(StandardNormal)
                };
                let a = dgp.mean_a(x).unwrap_or(0.0) + dgp.sigma_u * u;
                let t = DgpSpec::index(x);
                let y = if dgp.family == DgpFamily::PlSmooth {
                    dgp.slope * a + (2.0 * PI * t).cos() + dgp.sigma_e * e
                } else {
                    (2.0 * PI * t).cos() + dgp.rho * dgp.sigma_u * u + dgp.sigma_e * e
                };
                as_.push(a);
                ys.push(y);
            }
            DgpFamily::MdSmooth => {
                let observed = rng.gen::<f64>() < dgp.propensity(x).unwrap_or(1.0);
                let big_y = dgp.gamma0(x) + dgp.sigma_e * e;
                let a = if observed { 1.0 } else { 0.0 };
                as_.push(a);
                ys.push(a * big_y);
            }
            DgpFamily::AdQuadratic => {
                as_.push(0.0);
                ys.push(dgp.gamma0(x) + dgp.sigma_e * e);
            }
        }
    }
    Dataset::new(ys, as_, 1, xs, r)
}

pub fn true_beta(dgp: &DgpSpec) -> f64 {
    dgp.true_beta()
}

/// One replication's estimate of one estimator.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Draw {
    pub estimate: f64,
    pub se: f64,
}

impl Draw {
    pub fn from_result(r: &EstimateResult) -> Self {
        Draw {
            estimate: r.beta_scalar(),
            se: r.se_scalar(),
        }
    }
}

/// Replication summaries against a known truth.
///
/// `sd` and `rmse` use the `1/R` convention so that `rmse² = bias² + sd²`;
/// `mc_se` is the usual `sd_{R−1}/√R` standard error of `bias`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimatorSummary {
    pub estimator: String,
    pub reps: usize,
    pub failures: usize,
    pub mean_estimate: f64,
    pub bias: f64,
    pub mc_se: f64,
    pub sd: f64,
    pub rmse: f64,
    pub coverage: f64,
    pub mean_se: f64,
    /// Set when a single replication leaves the spread undefined (reported as 0).
    pub sd_undefined: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub first_error: Option<String>,
}

/// Summary of draws; `failures` counts replications that returned an error.
pub fn summarize(name: &str, truth: f64, draws: &[Draw], failures: usize) -> EstimatorSummary {
    let r = draws.len();
    if r == 0 {
        return EstimatorSummary {
            estimator: name.to_string(),
            reps: 0,
            failures,
            mean_estimate: f64::NAN,
            bias: f64::NAN,
            mc_se: f64::NAN,
            sd: f64::NAN,
            rmse: f64::NAN,
            coverage: f64::NAN,
            mean_se: f64::NAN,
            sd_undefined: true,
            first_error: None,
        };
    }
    let rf = r as f64;
    let errs: Vec<f64> = draws.iter().map(|d| d.estimate - truth).collect();
    let bias = errs.iter().sum::<f64>() / rf;
    let ss: f64 = errs.iter().map(|e| (e - bias).powi(2)).sum();
    let sd = (ss / rf).sqrt();
    let mc_se = if r > 1 { (ss / (rf - 1.0)).sqrt() / rf.sqrt() } else { 0.0 };
    let covered = draws
        .iter()
        .filter(|d| (d.estimate - truth).abs() <= crate::estimators::Z_95 * d.se)
        .count();
    EstimatorSummary {
        estimator: name.to_string(),
        reps: r,
        failures,
        mean_estimate: truth + bias,
        bias,
        mc_se,
        sd,
        rmse: (bias * bias + sd * sd).sqrt(),
        coverage: covered as f64 / rf,
        mean_se: draws.iter().map(|d| d.se).sum::<f64>() / rf,
        sd_undefined: r == 1,
        first_error: None,
    }
}

/// Runs `f(rep, seed_rep)` for `rep = 0..reps` with `seed_rep` derived from
/// `seed`, in parallel, returning results in replication order.
pub fn replicate<T, F>(reps: usize, seed: u64, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize, u64) -> T + Sync,
{
    (0..reps)
        .into_par_iter()
        .map(|i| f(i, derive_seed(seed, i as u64)))
        .collect()
}

/// How the basis size follows `n`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "rule", rename_all = "snake_case")]
pub enum BasisRule {
    /// Fixed knot cells per dimension.
    Cells { cells_per_dim: usize },
    /// Total size `K ≈ round(c·n^exponent)`; per dimension
    /// `J = max(κ + 1, round(K^{1/r}))` and cells `= J − κ`.
    Power { c: f64, exponent: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BasisConfig {
    pub kappa: usize,
    #[serde(flatten)]
    pub rule: BasisRule,
    #[serde(default)]
    pub normalization: Normalization,
}

impl BasisConfig {
    pub fn spec(&self, n: usize, r: usize) -> BasisSpec {
        let cells = match self.rule {
            BasisRule::Cells { cells_per_dim } => cells_per_dim,
            BasisRule::Power { c, exponent } => {
                let k = (c * (n as f64).powf(exponent)).round().max(1.0);
                let j = (k.powf(1.0 / r as f64).round() as usize).max(self.kappa + 1);
                j - self.kappa
            }
        };
        BasisSpec::new(r, self.kappa, cells).with_normalization(self.normalization)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MonteCarloConfig {
    pub dgp: DgpSpec,
    pub estimators: Vec<EstimatorKind>,
    pub n: usize,
    pub basis: BasisConfig,
    pub folds: usize,
    pub reps: usize,
    pub seed: u64,
    #[serde(default)]
    pub options: Option<EstimatorOptions>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MonteCarloReport {
    pub dgp: String,
    pub n: usize,
    pub k: usize,
    pub folds: usize,
    pub reps: usize,
    pub seed: u64,
    pub true_beta: f64,
    pub estimators: Vec<EstimatorSummary>,
}

impl MonteCarloReport {
    pub fn get(&self, kind: EstimatorKind) -> Option<&EstimatorSummary> {
        self.estimators.iter().find(|s| s.estimator == kind.name())
    }
}

/// One estimate on one simulated sample. The oracle estimator is the doubly
/// robust average with both nuisances at the truth over the whole sample.
pub fn run_estimator(
    kind: EstimatorKind,
    dgp: &DgpSpec,
    data: &Dataset,
    basis: &Basis,
    folds: usize,
    plan_seed: u64,
    opts: &EstimatorOptions,
) -> Result<EstimateResult> {
    let f = dgp.functional();
    if kind == EstimatorKind::Oracle {
        let plan = SplitPlan::no_split(data.n())?;
        let gamma = dgp.gamma_nuisance();
        let alpha = dgp.alpha_nuisance();
        return estimate_with_nuisances(&f, data, &plan, &gamma, Some(&alpha), true);
    }
    Ok(estimate(kind, &f, basis, data, folds, plan_seed, opts)?.0)
}

/// `reps` replications of every configured estimator on fresh samples.
///
/// Replication `i` draws its sample from `derive_seed(seed, i)` and its plan
/// from a seed derived from that; all estimators share the sample.
pub fn run_monte_carlo(cfg: &MonteCarloConfig) -> Result<MonteCarloReport> {
    if cfg.reps == 0 {
        return Err(Error::InvalidSpec("at least one replication is required".into()));
    }
    if cfg.estimators.is_empty() {
        return Err(Error::Config("no estimators configured".into()));
    }
    cfg.dgp.validate()?;
    let basis = Basis::new(cfg.basis.spec(cfg.n, cfg.dgp.r))?;
    let opts = cfg.options.unwrap_or_default();
    let truth = cfg.dgp.true_beta();
    let per_rep: Vec<Result<Vec<Result<Draw>>>> = replicate(cfg.reps, cfg.seed, |_, s| {
        let data = generate(&cfg.dgp, cfg.n, s)?;
        let plan_seed = derive_seed(s, u64::MAX);
        Ok(cfg
            .estimators
            .iter()
            .map(|&k| run_estimator(k, &cfg.dgp, &data, &basis, cfg.folds, plan_seed, &opts).map(|r| Draw::from_result(&r)))
            .collect())
    });
    let mut draws = vec![Vec::with_capacity(cfg.reps); cfg.estimators.len()];
    let mut failures = vec![0usize; cfg.estimators.len()];
    let mut first_error: Vec<Option<String>> = vec![None; cfg.estimators.len()];
    for rep in per_rep {
        for (j, res) in rep?.into_iter().enumerate() {
            match res {
                Ok(d) => draws[j].push(d),
                Err(e) => {
                    failures[j] += 1;
                    first_error[j].get_or_insert_with(|| format!("{}: {e}", e.code()));
                }
            }
        }
    }
    let estimators = cfg
        .estimators
        .iter()
        .enumerate()
        .map(|(j, k)| {
            let mut s = summarize(k.name(), truth, &draws[j], failures[j]);
            s.first_error = first_error[j].take();
            s
        })
        .collect();
    Ok(MonteCarloReport {
        dgp: cfg.dgp.family.name().to_string(),
        n: cfg.n,
        k: basis.k(),
        folds: cfg.folds,
        reps: cfg.reps,
        seed: cfg.seed,
        true_beta: truth,
        estimators,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateCell {
    pub n: usize,
    pub k: usize,
    pub rmse: f64,
    pub abs_bias: f64,
    pub mc_se: f64,
    pub coverage: f64,
    pub failures: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateReport {
    pub dgp: String,
    pub estimator: String,
    pub cells: Vec<RateCell>,
    /// OLS slope of `ln RMSE` on `ln n`.
    pub slope: f64,
    pub slope_se: f64,
    pub intercept: f64,
    pub target_slope: f64,
    pub note: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateConfig {
    pub dgp: DgpSpec,
    pub estimator: EstimatorKind,
    pub ns: Vec<usize>,
    pub basis: BasisConfig,
    pub folds: usize,
    pub reps: usize,
    pub seed: u64,
}

/// Least squares line through `(x, y)`: `(slope, se, intercept)`.
pub fn ols_slope(x: &[f64], y: &[f64]) -> Result<(f64, f64, f64)> {
    let m = x.len();
    if m < 3 || y.len() != m {
        return Err(Error::RateGridTooSmall(m));
    }
    let mf = m as f64;
    let xm = x.iter().sum::<f64>() / mf;
    let ym = y.iter().sum::<f64>() / mf;
    let sxx: f64 = x.iter().map(|v| (v - xm).powi(2)).sum();
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - xm) * (b - ym)).sum();
    let slope = sxy / sxx;
    let intercept = ym - slope * xm;
    let ssr: f64 = x.iter().zip(y).map(|(a, b)| (b - intercept - slope * a).powi(2)).sum();
    let se = (ssr / (mf - 2.0) / sxx).sqrt();
    Ok((slope, se, intercept))
}

/// Monte Carlo RMSE on each grid point, then the log-log slope.
pub fn rate_sweep(cfg: &RateConfig) -> Result<RateReport> {
    if cfg.ns.len() < 3 {
        return Err(Error::RateGridTooSmall(cfg.ns.len()));
    }
    if cfg.ns.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::Config("the n grid must be strictly increasing".into()));
    }
    let mut cells = Vec::with_capacity(cfg.ns.len());
    for (g, &n) in cfg.ns.iter().enumerate() {
        let mc = run_monte_carlo(&MonteCarloConfig {
            dgp: cfg.dgp,
            estimators: vec![cfg.estimator],
            n,
            basis: cfg.basis,
            folds: cfg.folds,
            reps: cfg.reps,
            seed: derive_seed(cfg.seed, g as u64),
            options: None,
        })?;
        let s = &mc.estimators[0];
        if s.reps == 0 {
            return Err(Error::Config(format!(
                "every replication failed at n = {n}: {}",
                s.first_error.as_deref().unwrap_or("unknown error")
            )));
        }
        cells.push(RateCell {
            n,
            k: mc.k,
            rmse: s.rmse,
            abs_bias: s.bias.abs(),
            mc_se: s.mc_se,
            coverage: s.coverage,
            failures: s.failures,
        });
    }
    let lx: Vec<f64> = cells.iter().map(|c| (c.n as f64).ln()).collect();
    let ly: Vec<f64> = cells.iter().map(|c| c.rmse.ln()).collect();
    let (slope, slope_se, intercept) = ols_slope(&lx, &ly)?;
    Ok(RateReport {
        dgp: cfg.dgp.family.name().to_string(),
        estimator: cfg.estimator.name().to_string(),
        cells,
        slope,
        slope_se,
        intercept,
        target_slope: -0.5,
        note: "root-n target; a flatter slope indicates a remainder of order sqrt(K/n) or K^(-s/r) dominating".into(),
    })
}
