//! Estimators of `β₀`.
//!
//! * [`plugin_no_split`]: `(1/n) Σ m(z_i, γ̂)` with `γ̂` fit on the full sample.
//!   Kept as the own-observation-biased baseline.
//! * [`cf_plugin`]: cross-fit plug-in, `γ̂_ℓ` trained off the evaluation fold.
//! * [`dr_estimate`]: `(1/n) Σ_ℓ Σ_{i∈I_ℓ} {m(z_i, γ̂_ℓ) + α̃_ℓ(x_i)(y_i − γ̂_ℓ(x_i))}`,
//!   single cross-fit or doubly cross-fit depending on the plan.
//! * [`pl_projection`]: doubly cross-fit partially linear projection, an IV
//!   form whose every entry is an expected-conditional-covariance estimate.
//! * [`hoif_ecc`]: empirical higher-order influence function estimator of the
//!   expected conditional covariance, orders `Q ∈ {0, 1}`.
//!
//! Every estimator divides by the number of evaluated observations, which is
//! `n` whenever the plan partitions the sample.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::basis::Dictionary;
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::functionals::{FunctionalSpec, Nuisance, SeriesFunction};
use crate::linreg::{Design, GramDiagnostics, SeriesFit, DEFAULT_REL_TOL};
use crate::splitting::{make_dcdr_plan, make_plugin_plan, make_single_cf_dr_plan, PlanKind, SplitPlan};

/// Normal quantile for two-sided 95% intervals.
pub const Z_95: f64 = 1.96;

/// Condition-number ceiling for the partially linear `Ĥ` matrix.
pub const PL_MAX_CONDITION: f64 = 1e12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EstimatorKind {
    PluginNoSplit,
    CfPlugin,
    SingleCfDr,
    Dcdr,
    PlProjection,
    Hoif0,
    Hoif1,
    /// Doubly robust form with both nuisances replaced by the truth.
    Oracle,
}

impl EstimatorKind {
    pub fn name(self) -> &'static str {
        match self {
            EstimatorKind::PluginNoSplit => "plugin_no_split",
            EstimatorKind::CfPlugin => "cf_plugin",
            EstimatorKind::SingleCfDr => "single_cf_dr",
            EstimatorKind::Dcdr => "dcdr",
            EstimatorKind::PlProjection => "pl_projection",
            EstimatorKind::Hoif0 => "hoif0",
            EstimatorKind::Hoif1 => "hoif1",
            EstimatorKind::Oracle => "oracle",
        }
    }
}

impl std::str::FromStr for EstimatorKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "plugin_no_split" | "plugin" => EstimatorKind::PluginNoSplit,
            "cf_plugin" => EstimatorKind::CfPlugin,
            "single_cf_dr" | "dr" => EstimatorKind::SingleCfDr,
            "dcdr" => EstimatorKind::Dcdr,
            "pl_projection" | "pl" => EstimatorKind::PlProjection,
            "hoif0" => EstimatorKind::Hoif0,
            "hoif1" => EstimatorKind::Hoif1,
            "oracle" => EstimatorKind::Oracle,
            other => return Err(Error::Config(format!("unknown estimator `{other}`"))),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EstimatorOptions {
    /// Relative eigenvalue cutoff of the generalized inverses.
    pub rel_tol: f64,
    /// Abort when a gram fails the `min_eig > 1e-8` flag instead of only
    /// reporting it.
    pub require_gate: bool,
}

impl Default for EstimatorOptions {
    fn default() -> Self {
        EstimatorOptions {
            rel_tol: DEFAULT_REL_TOL,
            require_gate: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupDiagnostics {
    pub group: usize,
    pub n_eval: usize,
    pub gamma: Option<GramDiagnostics>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub alpha: Option<GramDiagnostics>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimateDiagnostics {
    pub estimator: EstimatorKind,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub plan_kind: Option<PlanKind>,
    pub n: usize,
    pub n_eval: usize,
    pub k: usize,
    pub groups: Vec<GroupDiagnostics>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimateResult {
    /// Point estimate; one entry for scalar functionals.
    pub beta: Vec<f64>,
    /// Estimated influence values, one vector per component of `beta`, in
    /// plan order (group by group, evaluation indices in plan order).
    pub influence: Vec<Vec<f64>>,
    pub se: Vec<f64>,
    pub ci95: Vec<[f64; 2]>,
    pub diagnostics: EstimateDiagnostics,
}

impl EstimateResult {
    fn scalar(beta: f64, psi: Vec<f64>, diagnostics: EstimateDiagnostics) -> Result<Self> {
        let (se, ci) = influence_se(&psi, beta)?;
        Ok(EstimateResult {
            beta: vec![beta],
            influence: vec![psi],
            se: vec![se],
            ci95: vec![ci],
            diagnostics,
        })
    }

    pub fn beta_scalar(&self) -> f64 {
        self.beta[0]
    }

    pub fn se_scalar(&self) -> f64 {
        self.se[0]
    }

    /// Whether the first component's interval contains `truth`.
    pub fn covers(&self, truth: f64) -> bool {
        let [lo, hi] = self.ci95[0];
        lo <= truth && truth <= hi
    }
}

/// `se = sqrt((1/n²) Σ (ψ̂_i − ψ̄)²)` and `β ± 1.96·se`.
pub fn influence_se(psi: &[f64], beta: f64) -> Result<(f64, [f64; 2])> {
    if psi.is_empty() {
        return Err(Error::EmptyInput("no influence values".into()));
    }
    let n = psi.len() as f64;
    let mean = psi.iter().sum::<f64>() / n;
    let ss: f64 = psi.iter().map(|p| (p - mean).powi(2)).sum();
    let se = (ss / (n * n)).sqrt();
    Ok((se, [beta - Z_95 * se, beta + Z_95 * se]))
}

fn check_plan(plan: &SplitPlan, data: &Dataset) -> Result<()> {
    if plan.n != data.n() {
        return Err(Error::InvalidPlan(format!(
            "plan is for n = {} but the dataset has {} observations",
            plan.n,
            data.n()
        )));
    }
    Ok(())
}

fn check_data(f: &FunctionalSpec, data: &Dataset) -> Result<()> {
    data.require_scalar_a()?;
    f.validate()?;
    (0..data.n()).try_for_each(|i| f.check_observation(&data.obs(i)))
}

fn check_gram(fit: &SeriesFit, group: usize, role: &'static str, opts: &EstimatorOptions) -> Result<()> {
    if fit.gram.rank == 0 {
        return Err(Error::DegenerateGroup { group, role });
    }
    if opts.require_gate && !fit.gram.nonsingular_flag {
        return Err(Error::GateFailed {
            group,
            role,
            min_eig: fit.gram.min_eig,
        });
    }
    Ok(())
}

fn design_for(
    f: &FunctionalSpec,
    basis: &dyn Dictionary,
    data: &Dataset,
    idx: &[usize],
    opts: &EstimatorOptions,
) -> Result<Design> {
    let weights = match f {
        FunctionalSpec::MissingDataMean => Some(idx.iter().map(|&i| data.a(i)[0]).collect()),
        _ => None,
    };
    Design::new(basis, idx.iter().map(|&i| data.x(i)), weights, opts.rel_tol)
}

/// `γ̂` on the observations `idx`.
pub fn fit_gamma(
    f: &FunctionalSpec,
    basis: &dyn Dictionary,
    data: &Dataset,
    idx: &[usize],
    opts: &EstimatorOptions,
) -> Result<SeriesFit> {
    let design = design_for(f, basis, data, idx, opts)?;
    let ys: Vec<f64> = idx.iter().map(|&i| data.y(i)).collect();
    design.fit(&ys)
}

/// `α̃` on the observations `idx`: `Σ̃⁺ h̃_α` with `h̃_α` the mean of `v(z_i)`.
pub fn fit_alpha(
    f: &FunctionalSpec,
    basis: &dyn Dictionary,
    data: &Dataset,
    idx: &[usize],
    opts: &EstimatorOptions,
) -> Result<SeriesFit> {
    let design = design_for(f, basis, data, idx, opts)?;
    let h = f.riesz_moment(basis, data, idx)?;
    design.fit_moment(&h, crate::linreg::FitTarget::Riesz)
}

struct GroupNuisances<'a> {
    gamma: &'a dyn Nuisance,
    alpha: Option<&'a dyn Nuisance>,
}

/// Averages over the evaluation sets. Returns `(β, ψ̂)`; the correction term
/// enters `β` only when `doubly_robust`, but always enters `ψ̂` when an `α` is
/// available.
fn assemble(
    f: &FunctionalSpec,
    data: &Dataset,
    plan: &SplitPlan,
    nuisances: &[GroupNuisances<'_>],
    doubly_robust: bool,
) -> Result<(f64, Vec<f64>)> {
    let n_eval = plan.n_eval();
    let mut m_vals = Vec::with_capacity(n_eval);
    let mut corr = Vec::with_capacity(n_eval);
    for (group, nu) in plan.groups.iter().zip(nuisances) {
        // m does not depend on z for the integral functional: evaluate once
        let shared_m = if f.ignores_z() {
            Some(f.m_eval(&data.obs(group.eval_idx[0]), nu.gamma)?)
        } else {
            None
        };
        for &i in &group.eval_idx {
            let z = data.obs(i);
            let m = match shared_m {
                Some(m) => m,
                None => f.m_eval(&z, nu.gamma)?,
            };
            m_vals.push(m);
            let c = match nu.alpha {
                Some(alpha) => {
                    let w = f.riesz_value(&z, alpha)?;
                    if w == 0.0 {
                        0.0
                    } else {
                        w * f.residual(&z, nu.gamma)?
                    }
                }
                None => 0.0,
            };
            corr.push(c);
        }
    }
    let n = n_eval as f64;
    let beta = if doubly_robust {
        m_vals.iter().zip(&corr).map(|(m, c)| m + c).sum::<f64>() / n
    } else {
        m_vals.iter().sum::<f64>() / n
    };
    let psi = m_vals.iter().zip(&corr).map(|(m, c)| m + c - beta).collect();
    Ok((beta, psi))
}

fn fitted_estimate(
    f: &FunctionalSpec,
    basis: &dyn Dictionary,
    data: &Dataset,
    plan: &SplitPlan,
    doubly_robust: bool,
    estimator: EstimatorKind,
    opts: &EstimatorOptions,
) -> Result<EstimateResult> {
    check_data(f, data)?;
    check_plan(plan, data)?;
    let mut fits = Vec::with_capacity(plan.groups.len());
    let mut diags = Vec::with_capacity(plan.groups.len());
    for (g, group) in plan.groups.iter().enumerate() {
        let gamma = fit_gamma(f, basis, data, &group.gamma_idx, opts)?;
        check_gram(&gamma, g, "gamma", opts)?;
        let alpha = fit_alpha(f, basis, data, group.alpha_train(), opts)?;
        check_gram(&alpha, g, "alpha", opts)?;
        diags.push(GroupDiagnostics {
            group: g,
            n_eval: group.eval_idx.len(),
            gamma: Some(gamma.gram.diagnostics()),
            alpha: Some(alpha.gram.diagnostics()),
        });
        fits.push((gamma, alpha));
    }
    let funcs: Vec<(SeriesFunction<'_>, SeriesFunction<'_>)> = fits
        .iter()
        .map(|(g, a)| (SeriesFunction::new(basis, &g.coeffs), SeriesFunction::new(basis, &a.coeffs)))
        .collect();
    let nuisances: Vec<GroupNuisances<'_>> = funcs
        .iter()
        .map(|(g, a)| GroupNuisances {
            gamma: g as &dyn Nuisance,
            alpha: Some(a as &dyn Nuisance),
        })
        .collect();
    let (beta, psi) = assemble(f, data, plan, &nuisances, doubly_robust)?;
    EstimateResult::scalar(
        beta,
        psi,
        EstimateDiagnostics {
            estimator,
            plan_kind: Some(plan.kind),
            n: data.n(),
            n_eval: plan.n_eval(),
            k: basis.k(),
            groups: diags,
        },
    )
}

/// Plug-in estimate with `γ̂` fit on the whole sample.
pub fn plugin_no_split(f: &FunctionalSpec, basis: &dyn Dictionary, data: &Dataset) -> Result<EstimateResult> {
    plugin_no_split_with(f, basis, data, &EstimatorOptions::default())
}

pub fn plugin_no_split_with(
    f: &FunctionalSpec,
    basis: &dyn Dictionary,
    data: &Dataset,
    opts: &EstimatorOptions,
) -> Result<EstimateResult> {
    let plan = SplitPlan::no_split(data.n())?;
    fitted_estimate(f, basis, data, &plan, false, EstimatorKind::PluginNoSplit, opts)
}

/// Cross-fit plug-in estimate. `α̃_ℓ` is fit on the `γ̂_ℓ` training set for
/// the influence values only.
pub fn cf_plugin(f: &FunctionalSpec, basis: &dyn Dictionary, data: &Dataset, plan: &SplitPlan) -> Result<EstimateResult> {
    cf_plugin_with(f, basis, data, plan, &EstimatorOptions::default())
}

pub fn cf_plugin_with(
    f: &FunctionalSpec,
    basis: &dyn Dictionary,
    data: &Dataset,
    plan: &SplitPlan,
    opts: &EstimatorOptions,
) -> Result<EstimateResult> {
    if !matches!(plan.kind, PlanKind::Plugin | PlanKind::NoSplit) {
        return Err(Error::InvalidPlan(format!("cf_plugin needs a plugin plan, got {:?}", plan.kind)));
    }
    let estimator = if plan.kind == PlanKind::NoSplit {
        EstimatorKind::PluginNoSplit
    } else {
        EstimatorKind::CfPlugin
    };
    fitted_estimate(f, basis, data, plan, false, estimator, opts)
}

/// Doubly robust estimate; single cross-fit or DCDR according to `plan.kind`.
pub fn dr_estimate(f: &FunctionalSpec, basis: &dyn Dictionary, data: &Dataset, plan: &SplitPlan) -> Result<EstimateResult> {
    dr_estimate_with(f, basis, data, plan, &EstimatorOptions::default())
}

pub fn dr_estimate_with(
    f: &FunctionalSpec,
    basis: &dyn Dictionary,
    data: &Dataset,
    plan: &SplitPlan,
    opts: &EstimatorOptions,
) -> Result<EstimateResult> {
    let estimator = match plan.kind {
        PlanKind::Dcdr => EstimatorKind::Dcdr,
        PlanKind::SingleCfDr | PlanKind::Plugin => EstimatorKind::SingleCfDr,
        PlanKind::NoSplit => {
            return Err(Error::InvalidPlan("dr_estimate needs a cross-fit plan".into()));
        }
    };
    fitted_estimate(f, basis, data, plan, true, estimator, opts)
}

/// Plug-in or doubly robust average with the same fixed nuisance functions in
/// every group (oracle injection, fixed misspecified functions).
///
/// `alpha` follows the functional's convention: `−E[a|x]` for the expected
/// conditional covariance, `1/π(w)` for the missing-data mean and `ω/f₀` for
/// the integral functional.
pub fn estimate_with_nuisances(
    f: &FunctionalSpec,
    data: &Dataset,
    plan: &SplitPlan,
    gamma: &dyn Nuisance,
    alpha: Option<&dyn Nuisance>,
    doubly_robust: bool,
) -> Result<EstimateResult> {
    check_data(f, data)?;
    check_plan(plan, data)?;
    if doubly_robust && alpha.is_none() {
        return Err(Error::Config("the doubly robust form needs an alpha".into()));
    }
    let nuisances: Vec<GroupNuisances<'_>> = plan.groups.iter().map(|_| GroupNuisances { gamma, alpha }).collect();
    let (beta, psi) = assemble(f, data, plan, &nuisances, doubly_robust)?;
    EstimateResult::scalar(
        beta,
        psi,
        EstimateDiagnostics {
            estimator: EstimatorKind::Oracle,
            plan_kind: Some(plan.kind),
            n: data.n(),
            n_eval: plan.n_eval(),
            k: 0,
            groups: plan
                .groups
                .iter()
                .enumerate()
                .map(|(g, grp)| GroupDiagnostics {
                    group: g,
                    n_eval: grp.eval_idx.len(),
                    gamma: None,
                    alpha: None,
                })
                .collect(),
        },
    )
}

/// Runs estimator `kind` with the standard plan for it: `folds` groups
/// drawn from `seed`. HOIF uses the complement of the first of two folds for
/// `Σ̂` and zero initial nuisances. Returns the plan used, if any.
pub fn estimate(
    kind: EstimatorKind,
    f: &FunctionalSpec,
    basis: &dyn Dictionary,
    data: &Dataset,
    folds: usize,
    seed: u64,
    opts: &EstimatorOptions,
) -> Result<(EstimateResult, Option<SplitPlan>)> {
    let n = data.n();
    if matches!(f, FunctionalSpec::PartiallyLinearProjection) != (kind == EstimatorKind::PlProjection) {
        return Err(Error::Config(format!(
            "estimator {} does not apply to functional {:?}",
            kind.name(),
            f.kind()
        )));
    }
    match kind {
        EstimatorKind::PluginNoSplit => Ok((plugin_no_split_with(f, basis, data, opts)?, None)),
        EstimatorKind::CfPlugin => {
            let plan = make_plugin_plan(n, folds, seed)?;
            Ok((cf_plugin_with(f, basis, data, &plan, opts)?, Some(plan)))
        }
        EstimatorKind::SingleCfDr => {
            let plan = make_single_cf_dr_plan(n, folds, seed)?;
            Ok((dr_estimate_with(f, basis, data, &plan, opts)?, Some(plan)))
        }
        EstimatorKind::Dcdr => {
            let plan = make_dcdr_plan(n, folds, seed)?;
            Ok((dr_estimate_with(f, basis, data, &plan, opts)?, Some(plan)))
        }
        EstimatorKind::PlProjection => {
            let plan = make_dcdr_plan(n, folds, seed)?;
            Ok((pl_projection_with(basis, data, &plan, opts)?, Some(plan)))
        }
        EstimatorKind::Hoif0 | EstimatorKind::Hoif1 => {
            if *f != FunctionalSpec::Ecc {
                return Err(Error::Unsupported("HOIF is implemented for the expected conditional covariance only".into()));
            }
            let plan = make_plugin_plan(n, 2, seed)?;
            let q = usize::from(kind == EstimatorKind::Hoif1);
            let r = hoif_ecc(data, basis, &plan.groups[0].gamma_idx, q, None, None)?;
            Ok((r, Some(plan)))
        }
        EstimatorKind::Oracle => Err(Error::Config(
            "the oracle estimator needs a known data-generating process".into(),
        )),
    }
}

/// Numerator and denominator of the partially linear projection.
#[derive(Debug, Clone, PartialEq)]
pub struct PlMoments {
    /// `Ĥ = (1/n) Σ (a_i − α̃(x_i))(a_i − α̂(x_i))'`, row-major `d × d`.
    pub h: Vec<f64>,
    /// `(1/n) Σ (a_i − α̃(x_i))(y_i − γ̂(x_i))`.
    pub g: Vec<f64>,
}

/// Doubly cross-fit partially linear projection coefficients.
///
/// Per group, `γ̂` (y on p) and `α̂` (a on p) are trained on `gamma_idx`, and
/// `α̃` (a on p) on the `α` training set. The estimate solves `Ĥ β = ĝ`.
pub fn pl_projection(basis: &dyn Dictionary, data: &Dataset, plan: &SplitPlan) -> Result<EstimateResult> {
    pl_projection_with(basis, data, plan, &EstimatorOptions::default())
}

pub fn pl_projection_with(
    basis: &dyn Dictionary,
    data: &Dataset,
    plan: &SplitPlan,
    opts: &EstimatorOptions,
) -> Result<EstimateResult> {
    check_plan(plan, data)?;
    if plan.kind == PlanKind::NoSplit {
        return Err(Error::InvalidPlan("pl_projection needs a cross-fit plan".into()));
    }
    let d = data.a_dim();
    let n_eval = plan.n_eval();
    // per evaluated observation: instrument ũ, regressor û, residual e
    let mut inst = Vec::with_capacity(n_eval * d);
    let mut regr = Vec::with_capacity(n_eval * d);
    let mut resid = Vec::with_capacity(n_eval);
    let mut diags = Vec::with_capacity(plan.groups.len());
    let column = |idx: &[usize], k: usize| -> Vec<f64> { idx.iter().map(|&i| data.a(i)[k]).collect() };

    for (g, group) in plan.groups.iter().enumerate() {
        let hat = Design::new(basis, group.gamma_idx.iter().map(|&i| data.x(i)), None, opts.rel_tol)?;
        let tilde = Design::new(basis, group.alpha_train().iter().map(|&i| data.x(i)), None, opts.rel_tol)?;
        let ys: Vec<f64> = group.gamma_idx.iter().map(|&i| data.y(i)).collect();
        let gamma = hat.fit(&ys)?;
        check_gram(&gamma, g, "gamma", opts)?;
        let alpha_hat = (0..d)
            .map(|k| hat.fit(&column(&group.gamma_idx, k)))
            .collect::<Result<Vec<_>>>()?;
        let alpha_tilde = (0..d)
            .map(|k| tilde.fit(&column(group.alpha_train(), k)))
            .collect::<Result<Vec<_>>>()?;
        check_gram(&alpha_tilde[0], g, "alpha", opts)?;
        diags.push(GroupDiagnostics {
            group: g,
            n_eval: group.eval_idx.len(),
            gamma: Some(gamma.gram.diagnostics()),
            alpha: Some(alpha_tilde[0].gram.diagnostics()),
        });
        for &i in &group.eval_idx {
            let row = basis.eval_sparse(data.x(i))?;
            let a = data.a(i);
            for k in 0..d {
                inst.push(a[k] - row.dot(&alpha_tilde[k].coeffs));
                regr.push(a[k] - row.dot(&alpha_hat[k].coeffs));
            }
            resid.push(data.y(i) - row.dot(&gamma.coeffs));
        }
    }

    let n = n_eval as f64;
    let mut h = DMatrix::<f64>::zeros(d, d);
    let mut gv = DVector::<f64>::zeros(d);
    for i in 0..n_eval {
        for r in 0..d {
            gv[r] += inst[i * d + r] * resid[i];
            for c in 0..d {
                h[(r, c)] += inst[i * d + r] * regr[i * d + c];
            }
        }
    }
    h /= n;
    gv /= n;

    let scale = (0..data.n())
        .map(|i| data.a(i).iter().map(|v| v * v).sum::<f64>())
        .sum::<f64>()
        / data.n() as f64;
    let sv = h.clone().svd(false, false).singular_values;
    let smax = sv.max();
    let smin = sv.min();
    if smax <= 1e-12 * scale.max(f64::MIN_POSITIVE) || smin <= 0.0 || smax / smin > PL_MAX_CONDITION {
        return Err(Error::Singular(format!(
            "partially linear H matrix is numerically singular (singular values {smin:e}..{smax:e})"
        )));
    }
    let h_inv = h
        .clone()
        .try_inverse()
        .ok_or_else(|| Error::Singular("partially linear H matrix is not invertible".into()))?;
    let beta = &h_inv * &gv;

    let mut influence = vec![Vec::with_capacity(n_eval); d];
    for i in 0..n_eval {
        let u = DVector::from_column_slice(&inst[i * d..(i + 1) * d]);
        let fitted: f64 = (0..d).map(|k| regr[i * d + k] * beta[k]).sum();
        let psi = &h_inv * u * (resid[i] - fitted);
        for k in 0..d {
            influence[k].push(psi[k]);
        }
    }
    let mut se = Vec::with_capacity(d);
    let mut ci = Vec::with_capacity(d);
    for k in 0..d {
        let (s, c) = influence_se(&influence[k], beta[k])?;
        se.push(s);
        ci.push(c);
    }
    Ok(EstimateResult {
        beta: beta.as_slice().to_vec(),
        influence,
        se,
        ci95: ci,
        diagnostics: EstimateDiagnostics {
            estimator: EstimatorKind::PlProjection,
            plan_kind: Some(plan.kind),
            n: data.n(),
            n_eval,
            k: basis.k(),
            groups: diags,
        },
    })
}

/// The additive pieces of the HOIF estimate: `β̂_H = first − second + third`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HoifTerms {
    /// `(1/n) Σ u_i w_i`.
    pub first: f64,
    /// `(1/(n(n−1))) Σ_{i≠j} u_i p_i' Σ̂⁻¹ p_j w_j`.
    pub second: f64,
    /// Order-one term; zero for `Q = 0` or fewer than three observations.
    pub third: f64,
}

impl HoifTerms {
    pub fn estimate(&self) -> f64 {
        self.first - self.second + self.third
    }
}

/// Empirical HOIF estimate of the expected conditional covariance.
///
/// `Σ̂` comes from `training`; all sums run over the remaining observations.
/// `gamma_hat` and `alpha_hat` are initial estimates of `E[y|x]` and `E[a|x]`
/// (zero when absent). The order-one term
/// `((n−3)!/n!) Σ_{i≠j} u_i p_i' [Σ_{l∉{i,j}} B̂(x_l)] Σ̂⁻¹ p_j w_j`, with
/// `B̂(x) = Σ̂⁻¹(p(x)p(x)' − Σ̂)`, is computed in `O(nK²)` by expanding the
/// inner sum as the complete sum minus the `l = i` and `l = j` terms.
pub fn hoif_ecc(
    data: &Dataset,
    basis: &dyn Dictionary,
    training: &[usize],
    q: usize,
    gamma_hat: Option<&dyn Nuisance>,
    alpha_hat: Option<&dyn Nuisance>,
) -> Result<EstimateResult> {
    let (terms, psi, train_diag, n_est) = hoif_parts(data, basis, training, q, gamma_hat, alpha_hat)?;
    let beta = terms.estimate();
    EstimateResult::scalar(
        beta,
        psi,
        EstimateDiagnostics {
            estimator: if q == 0 { EstimatorKind::Hoif0 } else { EstimatorKind::Hoif1 },
            plan_kind: None,
            n: data.n(),
            n_eval: n_est,
            k: basis.k(),
            groups: vec![GroupDiagnostics {
                group: 0,
                n_eval: n_est,
                gamma: Some(train_diag),
                alpha: None,
            }],
        },
    )
}

/// The separate HOIF terms; see [`hoif_ecc`].
pub fn hoif_ecc_terms(
    data: &Dataset,
    basis: &dyn Dictionary,
    training: &[usize],
    q: usize,
    gamma_hat: Option<&dyn Nuisance>,
    alpha_hat: Option<&dyn Nuisance>,
) -> Result<HoifTerms> {
    Ok(hoif_parts(data, basis, training, q, gamma_hat, alpha_hat)?.0)
}

fn hoif_parts(
    data: &Dataset,
    basis: &dyn Dictionary,
    training: &[usize],
    q: usize,
    gamma_hat: Option<&dyn Nuisance>,
    alpha_hat: Option<&dyn Nuisance>,
) -> Result<(HoifTerms, Vec<f64>, GramDiagnostics, usize)> {
    if q > 1 {
        return Err(Error::Unsupported(format!("HOIF order Q = {q}; only 0 and 1 are implemented")));
    }
    data.require_scalar_a()?;
    let n_all = data.n();
    let mut in_train = vec![false; n_all];
    for &i in training {
        if i >= n_all {
            return Err(Error::InvalidPlan(format!("training index {i} out of range")));
        }
        in_train[i] = true;
    }
    let est: Vec<usize> = (0..n_all).filter(|&i| !in_train[i]).collect();
    if est.len() < 2 {
        return Err(Error::EmptyInput("HOIF needs at least two estimation observations".into()));
    }
    let train = Design::new(basis, training.iter().map(|&i| data.x(i)), None, DEFAULT_REL_TOL)?;
    let sigma = train.gram();
    if !sigma.nonsingular_flag {
        return Err(Error::Singular(format!(
            "training gram is singular (min eigenvalue {:e})",
            sigma.min_eig
        )));
    }
    let g = sigma.pinv();
    let k = basis.k();
    let n = est.len();
    let nf = n as f64;

    let mut p = DMatrix::<f64>::zeros(n, k);
    let mut u = DVector::<f64>::zeros(n);
    let mut w = DVector::<f64>::zeros(n);
    for (row, &i) in est.iter().enumerate() {
        let x = data.x(i);
        let sp = basis.eval_sparse(x)?;
        for (&c, &v) in sp.idx.iter().zip(&sp.val) {
            p[(row, c)] = v;
        }
        let ah = alpha_hat.map_or(Ok(0.0), |f| f.value(x))?;
        let gh = gamma_hat.map_or(Ok(0.0), |f| f.value(x))?;
        u[row] = data.a(i)[0] - ah;
        w[row] = data.y(i) - gh;
    }

    // projections P G; d_i = p_i' G p_i
    let pg = &p * g;
    let d = DVector::from_iterator(n, (0..n).map(|i| pg.row(i).dot(&p.row(i))));
    let uw = u.component_mul(&w);
    let big_u = p.tr_mul(&u);
    let big_w = p.tr_mul(&w);

    let first = uw.sum() / nf;
    let gw = g * &big_w;
    let full2 = big_u.dot(&gw);
    let second = (full2 - uw.dot(&d)) / (nf * (nf - 1.0));

    let third = if q == 1 && n >= 3 {
        let s = p.tr_mul(&p);
        let sigma_m = &sigma.matrix;
        let m = g * (&s - sigma_m * (nf - 2.0)) * g;
        let pm = &p * &m;
        let diag_m = DVector::from_iterator(n, (0..n).map(|i| pm.row(i).dot(&p.row(i))));
        let t1 = big_u.dot(&(&m * &big_w)) - uw.dot(&diag_m);
        let ud = u.component_mul(&d);
        let wd = w.component_mul(&d);
        let d2 = d.component_mul(&d);
        let t2 = p.tr_mul(&ud).dot(&gw) - uw.dot(&d2);
        let t3 = big_u.dot(&(g * p.tr_mul(&wd))) - uw.dot(&d2);
        // (n-3)!/n! in log space
        let log_weight = -(nf.ln() + (nf - 1.0).ln() + (nf - 2.0).ln());
        log_weight.exp() * (t1 - t2 - t3)
    } else {
        0.0
    };

    // influence: product of leave-one-out projection residuals
    let gu = g * &big_u;
    let psi = (0..n)
        .map(|i| {
            let pi = p.row(i).transpose();
            let proj_u = (pi.dot(&gu) - u[i] * d[i]) / (nf - 1.0);
            let proj_w = (pi.dot(&gw) - w[i] * d[i]) / (nf - 1.0);
            (u[i] - proj_u) * (w[i] - proj_w)
        })
        .collect();

    Ok((HoifTerms { first, second, third }, psi, sigma.diagnostics(), n))
}
