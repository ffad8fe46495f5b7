//! Dataset ingestion, run configuration and JSON reports.

use std::io::Read;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::basis::{Basis, BasisSpec, Normalization};
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::estimators::{estimate, EstimateDiagnostics, EstimatorKind, EstimatorOptions};
use crate::functionals::{FunctionalKind, FunctionalSpec, Weight, WeightProfile};
use crate::linreg::DEFAULT_REL_TOL;
use crate::simlab::{
    rate_sweep, run_monte_carlo, BasisConfig, BasisRule, DgpSpec, MonteCarloConfig, MonteCarloReport, RateConfig,
    RateReport,
};
use crate::splitting::SplitPlan;

pub const SCHEMA_VERSION: &str = "1";
pub const THREADS_ENV: &str = "CROSSFIT_THREADS";

/// Min-max map applied to one covariate column.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ColumnRescale {
    pub column: String,
    pub min: f64,
    pub max: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LoadedData {
    pub data: Dataset,
    /// Present when covariates were rescaled to `[0,1]`.
    pub rescaled: Option<Vec<ColumnRescale>>,
}

fn numbered_columns(headers: &[String], prefix: &str) -> Vec<usize> {
    let mut out = Vec::new();
    for j in 1.. {
        match headers.iter().position(|h| *h == format!("{prefix}{j}")) {
            Some(c) => out.push(c),
            None => break,
        }
    }
    out
}

/// Reads a header-row CSV with columns `y`, `a` (or `a1..ad` for the partially
/// linear projection) and `x1..xr` (`w1..wr` for the missing-data mean).
///
/// The `a` column is optional for the weighted average derivative. Row numbers
/// in errors count data records from one.
pub fn load_csv(path: &Path, kind: FunctionalKind, rescale: bool) -> Result<LoadedData> {
    let file = std::fs::File::open(path)?;
    read_csv(file, kind, rescale)
}

pub fn read_csv<R: Read>(input: R, kind: FunctionalKind, rescale: bool) -> Result<LoadedData> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).trim(csv::Trim::All).from_reader(input);
    let headers: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
    let find = |name: &str| headers.iter().position(|h| h == name);

    let y_col = find("y").ok_or_else(|| Error::MissingColumn("y".into()))?;
    let a_cols: Vec<usize> = match (find("a"), kind) {
        (Some(c), _) => vec![c],
        (None, FunctionalKind::PartiallyLinearProjection) => {
            let cols = numbered_columns(&headers, "a");
            if cols.is_empty() {
                return Err(Error::MissingColumn("a".into()));
            }
            cols
        }
        (None, FunctionalKind::WeightedAvgDerivative) => Vec::new(),
        (None, _) => return Err(Error::MissingColumn("a".into())),
    };
    let (primary, secondary) = if kind == FunctionalKind::MissingDataMean {
        ("w", "x")
    } else {
        ("x", "w")
    };
    let mut x_prefix = primary;
    let mut x_cols = numbered_columns(&headers, primary);
    if x_cols.is_empty() {
        x_prefix = secondary;
        x_cols = numbered_columns(&headers, secondary);
    }
    if x_cols.is_empty() {
        return Err(Error::MissingColumn(format!("{primary}1")));
    }

    let r = x_cols.len();
    let a_dim = a_cols.len().max(1);
    let mut y = Vec::new();
    let mut a = Vec::new();
    let mut x = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let row = i + 1;
        let rec = rec.map_err(|e| Error::Data {
            row,
            message: e.to_string(),
        })?;
        let cell = |c: usize| -> Result<f64> {
            let s = rec.get(c).unwrap_or("");
            s.parse::<f64>().map_err(|_| Error::Data {
                row,
                message: format!("column `{}`: `{s}` is not a number", headers[c]),
            })
        };
        y.push(cell(y_col)?);
        if a_cols.is_empty() {
            a.push(0.0);
        }
        for &c in &a_cols {
            let v = cell(c)?;
            if kind == FunctionalKind::MissingDataMean && v != 0.0 && v != 1.0 {
                return Err(Error::Data {
                    row,
                    message: format!("missing-data indicator `a` must be 0 or 1, got {v}"),
                });
            }
            a.push(v);
        }
        for &c in &x_cols {
            x.push(cell(c)?);
        }
    }
    if y.is_empty() {
        return Err(Error::EmptyInput("the CSV file has no data rows".into()));
    }

    let rescaled = if rescale {
        let n = y.len();
        let mut info = Vec::with_capacity(r);
        for j in 0..r {
            let col = (0..n).map(|i| x[i * r + j]);
            let lo = col.clone().fold(f64::INFINITY, f64::min);
            let hi = col.fold(f64::NEG_INFINITY, f64::max);
            let span = hi - lo;
            for i in 0..n {
                let v = &mut x[i * r + j];
                *v = if span > 0.0 { ((*v - lo) / span).clamp(0.0, 1.0) } else { 0.5 };
            }
            info.push(ColumnRescale {
                column: format!("{x_prefix}{}", j + 1),
                min: lo,
                max: hi,
            });
        }
        Some(info)
    } else {
        None
    };
    Ok(LoadedData {
        data: Dataset::new(y, a, a_dim, x, r)?,
        rescaled,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Estimate,
    Simulate,
    Rates,
}

/// Run settings as read from a config file or flags; every field optional so
/// that flags can override a file field by field.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ConfigPatch {
    pub functional: Option<FunctionalKind>,
    pub estimator: Option<EstimatorKind>,
    pub estimators: Option<Vec<EstimatorKind>>,
    pub kappa: Option<usize>,
    pub cells: Option<usize>,
    pub k_c: Option<f64>,
    pub k_exponent: Option<f64>,
    pub normalization: Option<Normalization>,
    pub weight: Option<Weight>,
    pub folds: Option<usize>,
    pub seed: Option<u64>,
    pub data: Option<PathBuf>,
    pub dgp: Option<String>,
    pub r: Option<usize>,
    pub n: Option<usize>,
    pub ns: Option<Vec<usize>>,
    pub reps: Option<usize>,
    pub out: Option<PathBuf>,
    pub rescale: Option<bool>,
    pub require_gate: Option<bool>,
    pub rel_tol: Option<f64>,
    pub threads: Option<usize>,
}

impl ConfigPatch {
    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    /// Fields set in `over` replace those in `self`.
    pub fn merge(self, over: ConfigPatch) -> ConfigPatch {
        macro_rules! pick {
            ($($f:ident),*) => {
                ConfigPatch { $($f: over.$f.or(self.$f)),* }
            };
        }
        pick!(
            functional, estimator, estimators, kappa, cells, k_c, k_exponent, normalization, weight, folds, seed,
            data, dgp, r, n, ns, reps, out, rescale, require_gate, rel_tol, threads
        )
    }

    /// Applies defaults and checks that `mode` has what it needs.
    pub fn resolve(self, mode: Mode) -> Result<RunConfig> {
        let need = |what: &str| Error::Config(format!("{} mode needs `{what}`", mode_name(mode)));
        let basis = match (self.cells, mode) {
            (Some(cells), _) => BasisRule::Cells { cells_per_dim: cells },
            (None, Mode::Rates) => BasisRule::Power {
                c: self.k_c.unwrap_or(2.0),
                exponent: self.k_exponent.unwrap_or(1.0 / 3.0),
            },
            (None, _) => return Err(need("cells")),
        };
        let dgp = match mode {
            Mode::Estimate => None,
            _ => {
                let mut d = DgpSpec::named(self.dgp.as_deref().ok_or_else(|| need("dgp"))?, self.r.unwrap_or(1))?;
                d.validate()?;
                if let Some(r) = self.r {
                    d.r = r;
                }
                Some(d)
            }
        };
        let functional = match (&dgp, self.functional) {
            (Some(d), Some(k)) if d.functional().kind() != k => {
                return Err(Error::Config(format!(
                    "dgp `{}` is built for {:?}, not {k:?}",
                    d.family.name(),
                    d.functional().kind()
                )))
            }
            (Some(d), _) => d.functional().kind(),
            (None, Some(k)) => k,
            (None, None) => return Err(need("functional")),
        };
        let default_estimator = if functional == FunctionalKind::PartiallyLinearProjection {
            EstimatorKind::PlProjection
        } else {
            EstimatorKind::Dcdr
        };
        let estimators = match mode {
            Mode::Simulate => self.estimators.clone().or(self.estimator.map(|e| vec![e])).unwrap_or_else(|| {
                if functional == FunctionalKind::PartiallyLinearProjection {
                    vec![EstimatorKind::PlProjection]
                } else {
                    vec![
                        EstimatorKind::PluginNoSplit,
                        EstimatorKind::CfPlugin,
                        EstimatorKind::Dcdr,
                        EstimatorKind::Oracle,
                    ]
                }
            }),
            _ => vec![self.estimator.unwrap_or(default_estimator)],
        };
        let cfg = RunConfig {
            mode,
            functional,
            estimators,
            kappa: self.kappa.unwrap_or(0),
            basis,
            normalization: self.normalization.unwrap_or_default(),
            weight: match functional {
                FunctionalKind::WeightedAvgDerivative => Some(self.weight.unwrap_or(Weight {
                    profile: WeightProfile::PolynomialBump,
                    by_parts: true,
                })),
                _ => None,
            },
            folds: self.folds.unwrap_or(3),
            seed: self.seed.unwrap_or(0),
            data: match mode {
                Mode::Estimate => Some(self.data.clone().ok_or_else(|| need("data"))?),
                _ => None,
            },
            dgp,
            n: match mode {
                Mode::Simulate => Some(self.n.ok_or_else(|| need("n"))?),
                _ => None,
            },
            ns: match mode {
                Mode::Rates => Some(self.ns.clone().ok_or_else(|| need("ns"))?),
                _ => None,
            },
            reps: match mode {
                Mode::Estimate => None,
                _ => Some(self.reps.unwrap_or(200)),
            },
            out: self.out,
            rescale: self.rescale.unwrap_or(false),
            require_gate: self.require_gate.unwrap_or(false),
            rel_tol: self.rel_tol.unwrap_or(DEFAULT_REL_TOL),
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

fn mode_name(mode: Mode) -> &'static str {
    match mode {
        Mode::Estimate => "estimate",
        Mode::Simulate => "simulate",
        Mode::Rates => "rates",
    }
}

/// A validated run configuration; echoed verbatim in the report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub mode: Mode,
    pub functional: FunctionalKind,
    pub estimators: Vec<EstimatorKind>,
    pub kappa: usize,
    pub basis: BasisRule,
    pub normalization: Normalization,
    pub weight: Option<Weight>,
    pub folds: usize,
    pub seed: u64,
    pub data: Option<PathBuf>,
    pub dgp: Option<DgpSpec>,
    pub n: Option<usize>,
    pub ns: Option<Vec<usize>>,
    pub reps: Option<usize>,
    pub out: Option<PathBuf>,
    pub rescale: bool,
    pub require_gate: bool,
    pub rel_tol: f64,
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        if self.folds < 2 {
            return Err(Error::Config("folds must be at least 2".into()));
        }
        if !(self.rel_tol > 0.0 && self.rel_tol < 1.0) {
            return Err(Error::Config("rel_tol must lie in (0, 1)".into()));
        }
        if let BasisRule::Cells { cells_per_dim: 0 } = self.basis {
            return Err(Error::Config("cells must be positive".into()));
        }
        if self.reps == Some(0) {
            return Err(Error::Config("reps must be positive".into()));
        }
        if let Some(ns) = &self.ns {
            if ns.len() < 3 {
                return Err(Error::RateGridTooSmall(ns.len()));
            }
        }
        if let Some(w) = &self.weight {
            w.validate()?;
        }
        self.functional_spec().validate()
    }

    pub fn functional_spec(&self) -> FunctionalSpec {
        match self.functional {
            FunctionalKind::Ecc => FunctionalSpec::Ecc,
            FunctionalKind::MissingDataMean => FunctionalSpec::MissingDataMean,
            FunctionalKind::PartiallyLinearProjection => FunctionalSpec::PartiallyLinearProjection,
            FunctionalKind::WeightedAvgDerivative => FunctionalSpec::weighted_avg_derivative(
                self.weight.unwrap_or(Weight::density(WeightProfile::PolynomialBump)),
            ),
        }
    }

    fn basis_config(&self) -> BasisConfig {
        BasisConfig {
            kappa: self.kappa,
            rule: self.basis,
            normalization: self.normalization,
        }
    }

    fn options(&self) -> EstimatorOptions {
        EstimatorOptions {
            rel_tol: self.rel_tol,
            require_gate: self.require_gate,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimateSection {
    pub estimator: EstimatorKind,
    pub n: usize,
    pub k: usize,
    pub beta: Vec<f64>,
    pub se: Vec<f64>,
    pub ci95: Vec<[f64; 2]>,
    pub diagnostics: EstimateDiagnostics,
    pub plan: Option<SplitPlan>,
    pub rescaled: Option<Vec<ColumnRescale>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub schema: String,
    pub config: RunConfig,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub estimate: Option<EstimateSection>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub monte_carlo: Option<MonteCarloReport>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub rates: Option<RateReport>,
    /// Seconds since the Unix epoch when the report was written; the only
    /// field that differs between identical runs.
    pub timestamp: String,
}

impl Report {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorReport {
    pub schema: String,
    pub error: ErrorBody,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorBody {
    pub code: String,
    pub message: String,
}

pub fn error_json(e: &Error) -> String {
    let r = ErrorReport {
        schema: SCHEMA_VERSION.into(),
        error: ErrorBody {
            code: e.code().into(),
            message: e.to_string(),
        },
    };
    serde_json::to_string(&r).unwrap_or_else(|_| format!("{{\"error\":{{\"code\":\"{}\"}}}}", e.code()))
}

fn timestamp() -> String {
    std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .map(|d| d.as_secs().to_string())
        .unwrap_or_default()
}

/// Worker threads: `CROSSFIT_THREADS` beats the flag; `None` means all cores.
pub fn resolve_threads(flag: Option<usize>) -> Result<Option<usize>> {
    match std::env::var(THREADS_ENV) {
        Ok(v) => {
            let t: usize = v
                .trim()
                .parse()
                .map_err(|_| Error::Config(format!("{THREADS_ENV} must be a positive integer, got `{v}`")))?;
            if t == 0 {
                return Err(Error::Config(format!("{THREADS_ENV} must be positive")));
            }
            Ok(Some(t))
        }
        Err(_) => Ok(flag.filter(|&t| t > 0)),
    }
}

/// Executes the configured pipeline and returns the report; writes it to
/// `config.out` when set.
pub fn run(config: &RunConfig) -> Result<Report> {
    let mut report = Report {
        schema: SCHEMA_VERSION.into(),
        config: config.clone(),
        estimate: None,
        monte_carlo: None,
        rates: None,
        timestamp: String::new(),
    };
    match config.mode {
        Mode::Estimate => {
            let path = config.data.as_ref().ok_or_else(|| Error::Config("no data path".into()))?;
            let loaded = load_csv(path, config.functional, config.rescale)?;
            let data = &loaded.data;
            let spec = config.basis_config().spec(data.n(), data.r());
            let basis = Basis::new(spec)?;
            let f = config.functional_spec();
            let kind = config.estimators[0];
            let (res, plan) = estimate(kind, &f, &basis, data, config.folds, config.seed, &config.options())?;
            report.estimate = Some(EstimateSection {
                estimator: kind,
                n: data.n(),
                k: basis.k(),
                beta: res.beta,
                se: res.se,
                ci95: res.ci95,
                diagnostics: res.diagnostics,
                plan,
                rescaled: loaded.rescaled,
            });
        }
        Mode::Simulate => {
            let dgp = config.dgp.ok_or_else(|| Error::Config("no dgp".into()))?;
            report.monte_carlo = Some(run_monte_carlo(&MonteCarloConfig {
                dgp,
                estimators: config.estimators.clone(),
                n: config.n.unwrap_or_default(),
                basis: config.basis_config(),
                folds: config.folds,
                reps: config.reps.unwrap_or_default(),
                seed: config.seed,
                options: Some(config.options()),
            })?);
        }
        Mode::Rates => {
            let dgp = config.dgp.ok_or_else(|| Error::Config("no dgp".into()))?;
            report.rates = Some(rate_sweep(&RateConfig {
                dgp,
                estimator: config.estimators[0],
                ns: config.ns.clone().unwrap_or_default(),
                basis: config.basis_config(),
                folds: config.folds,
                reps: config.reps.unwrap_or_default(),
                seed: config.seed,
            })?);
        }
    }
    report.timestamp = timestamp();
    if let Some(out) = &config.out {
        std::fs::write(out, report.to_json()?)?;
    }
    Ok(report)
}

/// Basis spec actually used for a dataset of `n` observations in `r` dimensions.
pub fn basis_spec_for(config: &RunConfig, n: usize, r: usize) -> BasisSpec {
    config.basis_config().spec(n, r)
}
