use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use crossfit::basis::Normalization;
use crossfit::cli_io::{error_json, resolve_threads, run, ConfigPatch, Mode};
use crossfit::estimators::EstimatorKind;
use crossfit::functionals::{FunctionalKind, Weight, WeightProfile};
use crossfit::{Error, Result};

#[derive(Parser)]
#[command(name = "crossfit", version, about = "Cross-fit doubly robust estimation of average linear functionals")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Estimate a functional from a CSV dataset.
    Estimate(Common),
    /// Monte Carlo replications on a built-in data-generating process.
    Simulate(Common),
    /// Monte Carlo RMSE over a grid of sample sizes and its log-log slope.
    Rates(Common),
}

#[derive(Args)]
struct Common {
    /// JSON config file; flags override its fields.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    functional: Option<String>,
    /// Estimator name; comma-separated list for `simulate`.
    #[arg(long)]
    estimator: Option<String>,
    #[arg(long)]
    kappa: Option<usize>,
    /// Knot cells per dimension.
    #[arg(long)]
    cells: Option<usize>,
    /// Basis size rule K = c·n^exponent for `rates` when --cells is absent.
    #[arg(long)]
    k_c: Option<f64>,
    #[arg(long)]
    k_exponent: Option<f64>,
    /// `none` or `uniform_design`.
    #[arg(long)]
    normalization: Option<String>,
    /// Weight profile of the average derivative: uniform, polynomial_bump, raised_cosine.
    #[arg(long)]
    weight: Option<String>,
    /// Treat the weight as a density on γ itself instead of a derivative weight.
    #[arg(long)]
    density_weight: bool,
    #[arg(long)]
    folds: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long)]
    dgp: Option<String>,
    #[arg(long)]
    r: Option<usize>,
    #[arg(long)]
    n: Option<usize>,
    /// Comma-separated sample sizes.
    #[arg(long, value_delimiter = ',')]
    ns: Option<Vec<usize>>,
    #[arg(long)]
    reps: Option<usize>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Min-max rescale covariates to [0,1] on ingestion.
    #[arg(long)]
    rescale: bool,
    /// Abort when a gram matrix is numerically singular.
    #[arg(long)]
    require_gate: bool,
    #[arg(long)]
    rel_tol: Option<f64>,
    /// Worker threads; CROSSFIT_THREADS takes precedence.
    #[arg(long)]
    threads: Option<usize>,
}

fn parse_json_enum<T: serde::de::DeserializeOwned>(s: &str, what: &str) -> Result<T> {
    serde_json::from_value(serde_json::Value::String(s.to_string()))
        .map_err(|_| Error::Config(format!("unknown {what} `{s}`")))
}

impl Common {
    fn patch(&self) -> Result<ConfigPatch> {
        let mut estimators: Option<Vec<EstimatorKind>> = None;
        if let Some(list) = &self.estimator {
            estimators = Some(list.split(',').map(|s| s.trim().parse()).collect::<Result<_>>()?);
        }
        let weight = match &self.weight {
            Some(w) => {
                let profile: WeightProfile = parse_json_enum(w, "weight profile")?;
                Some(Weight {
                    profile,
                    by_parts: !self.density_weight,
                })
            }
            None if self.density_weight => Some(Weight::density(WeightProfile::PolynomialBump)),
            None => None,
        };
        Ok(ConfigPatch {
            functional: self.functional.as_deref().map(str::parse::<FunctionalKind>).transpose()?,
            estimator: estimators.as_ref().and_then(|v| v.first().copied()),
            estimators,
            kappa: self.kappa,
            cells: self.cells,
            k_c: self.k_c,
            k_exponent: self.k_exponent,
            normalization: self
                .normalization
                .as_deref()
                .map(|s| parse_json_enum::<Normalization>(s, "normalization"))
                .transpose()?,
            weight,
            folds: self.folds,
            seed: self.seed,
            data: self.data.clone(),
            dgp: self.dgp.clone(),
            r: self.r,
            n: self.n,
            ns: self.ns.clone(),
            reps: self.reps,
            out: self.out.clone(),
            rescale: self.rescale.then_some(true),
            require_gate: self.require_gate.then_some(true),
            rel_tol: self.rel_tol,
            threads: self.threads,
        })
    }
}

fn execute(mode: Mode, args: &Common) -> Result<String> {
    let file = match &args.config {
        Some(p) => ConfigPatch::from_file(p)?,
        None => ConfigPatch::default(),
    };
    let patch = file.merge(args.patch()?);
    if let Some(t) = resolve_threads(patch.threads)? {
        rayon::ThreadPoolBuilder::new()
            .num_threads(t)
            .build_global()
            .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    }
    let config = patch.resolve(mode)?;
    let report = run(&config)?;
    report.to_json()
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (mode, args) = match &cli.command {
        Command::Estimate(a) => (Mode::Estimate, a),
        Command::Simulate(a) => (Mode::Simulate, a),
        Command::Rates(a) => (Mode::Rates, a),
    };
    match execute(mode, args) {
        Ok(json) => {
            if args.out.is_none() {
                println!("{json}");
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("{}", error_json(&e));
            ExitCode::from(2)
        }
    }
}
