//! `pearl`: fit, test and evaluate sparse treatment rules from CSV data, and
//! run the simulation study.

mod commands;
mod config;
mod failure;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use pearl_core::inference::VarianceAt;
use pearl_core::nuisance::{OutcomeKind, PropensityKind};
use pearl_core::simulation::{Method, Scenario};
use pearl_core::solver::LambdaPolicy;
use pearl_core::surrogate::SurrogateKind;
use serde::de::DeserializeOwned;

use commands::Sink;
use config::RunConfig;
use failure::Failure;

#[derive(Parser, Debug)]
#[command(name = "pearl", version, about = "Sparse individualized treatment rules with inference")]
struct Cli {
    /// JSON run configuration; flags override its fields.
    #[arg(long, global = true, env = "PEARL_CONFIG")]
    config: Option<PathBuf>,

    /// Worker threads (default: all cores). Results do not depend on it.
    #[arg(long, global = true)]
    threads: Option<usize>,

    /// Print the effective configuration and exit.
    #[arg(long, global = true)]
    print_config: bool,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Fit the rule; writes pooled and per-fold coefficients as CSV.
    Fit(DataArgs),
    /// Score tests and intervals for rule coefficients; writes JSON.
    Test {
        #[command(flatten)]
        data: DataArgs,
        /// 1-based coordinates, comma separated.
        #[arg(long, value_delimiter = ',')]
        coordinates: Option<Vec<usize>>,
        /// Where the score variance is evaluated: estimate or null.
        #[arg(long, value_parser = kebab::<VarianceAt>)]
        variance_at: Option<VarianceAt>,
    },
    /// Single-split confidence interval for the fitted rule's value; writes JSON.
    Value {
        #[command(flatten)]
        data: DataArgs,
        /// Share of rows used to fit the rule and nuisances.
        #[arg(long)]
        fit_fraction: Option<f64>,
    },
    /// Monte Carlo study on the synthetic scenarios; writes CSV and a JSON summary.
    Simulate(SimArgs),
}

/// Options shared by every command.
#[derive(Args, Debug)]
struct ModelArgs {
    /// Root seed; every random choice derives from it.
    #[arg(long)]
    seed: Option<u64>,
    /// Output file.
    #[arg(long, short)]
    output: Option<PathBuf>,
    /// Cross-fitting folds K.
    #[arg(long)]
    folds: Option<usize>,
    /// Propensity backend: screen-kernel, l1-logistic or known.
    #[arg(long, value_parser = kebab::<PropensityKind>)]
    propensity: Option<PropensityKind>,
    /// Outcome backend: screen-kernel, l1-linear, zero or known.
    #[arg(long = "outcome-model", value_parser = kebab::<OutcomeKind>)]
    outcome_model: Option<OutcomeKind>,
    /// Lower propensity clamp.
    #[arg(long)]
    trim_lo: Option<f64>,
    /// Upper propensity clamp.
    #[arg(long)]
    trim_hi: Option<f64>,
    /// Surrogate loss (logistic).
    #[arg(long, value_parser = kebab::<SurrogateKind>)]
    surrogate: Option<SurrogateKind>,
    /// `cv` or a fixed penalty.
    #[arg(long, value_parser = parse_lambda)]
    lambda: Option<LambdaPolicy>,
}

#[derive(Args, Debug)]
struct DataArgs {
    /// Input CSV with a header row.
    #[arg(long, short)]
    input: Option<PathBuf>,
    /// Outcome column name.
    #[arg(long)]
    outcome: Option<String>,
    /// Treatment column name.
    #[arg(long)]
    treatment: Option<String>,
    /// Covariate columns, comma separated (default: all other columns).
    #[arg(long, value_delimiter = ',')]
    covariates: Option<Vec<String>>,
    /// Treatment cell values meaning +1, comma separated.
    #[arg(long, value_delimiter = ',')]
    treated_values: Option<Vec<String>>,
    /// Treatment cell values meaning -1, comma separated.
    #[arg(long, value_delimiter = ',')]
    control_values: Option<Vec<String>>,
    #[command(flatten)]
    model: ModelArgs,
}

#[derive(Args, Debug)]
struct SimArgs {
    /// Scenario 1 (linear) or 2 (nonlinear).
    #[arg(long)]
    scenario: Option<Scenario>,
    /// Sample size per replication.
    #[arg(long)]
    n: Option<usize>,
    /// Number of covariates (at least 8).
    #[arg(long)]
    p: Option<usize>,
    /// Effect size ξ in [0, 1].
    #[arg(long)]
    xi: Option<f64>,
    /// Number of replications.
    #[arg(long)]
    reps: Option<usize>,
    /// Comma separated: pearl, baseline-q.
    #[arg(long, value_delimiter = ',')]
    methods: Option<Vec<Method>>,
    /// 1-based coordinates to test, comma separated.
    #[arg(long, value_delimiter = ',')]
    coordinates: Option<Vec<usize>>,
    /// Draws for the Monte Carlo value oracle.
    #[arg(long)]
    oracle_draws: Option<usize>,
    /// Size of the reference fits for coverage targets; 0 skips them.
    #[arg(long)]
    reference_n: Option<usize>,
    /// Significance level for rejection rates.
    #[arg(long)]
    alpha: Option<f64>,
    /// Skip the value confidence interval.
    #[arg(long)]
    no_value_inference: bool,
    /// Skip the oracle value of the fitted rules.
    #[arg(long)]
    no_achieved_value: bool,
    /// Directory for each replication's data and the raw records.
    #[arg(long)]
    dump: Option<PathBuf>,
    #[command(flatten)]
    model: ModelArgs,
}

fn kebab<T: DeserializeOwned>(s: &str) -> Result<T, String> {
    serde_json::from_value(serde_json::Value::String(s.to_string())).map_err(|e| e.to_string())
}

fn parse_lambda(s: &str) -> Result<LambdaPolicy, String> {
    if s.eq_ignore_ascii_case("cv") {
        return Ok(LambdaPolicy::Cv);
    }
    match s.parse::<f64>() {
        Ok(v) if v >= 0.0 && v.is_finite() => Ok(LambdaPolicy::Fixed(v)),
        _ => Err(format!("expected `cv` or a non-negative number, got {s:?}")),
    }
}

fn apply_model(cfg: &mut RunConfig, m: ModelArgs) {
    if let Some(v) = m.seed {
        cfg.seed = v;
    }
    if let Some(v) = m.output {
        cfg.output = Some(v);
    }
    if let Some(v) = m.folds {
        cfg.pearl.folds = v;
    }
    if let Some(v) = m.propensity {
        cfg.pearl.nuisance.propensity = v;
    }
    if let Some(v) = m.outcome_model {
        cfg.pearl.nuisance.outcome = v;
    }
    if let Some(v) = m.trim_lo {
        cfg.pearl.nuisance.trim.lo = v;
    }
    if let Some(v) = m.trim_hi {
        cfg.pearl.nuisance.trim.hi = v;
    }
    if let Some(v) = m.surrogate {
        cfg.pearl.surrogate = v;
    }
    if let Some(v) = m.lambda {
        cfg.pearl.lambda = v;
    }
}

fn apply_data(cfg: &mut RunConfig, d: DataArgs) {
    if let Some(v) = d.input {
        cfg.input = Some(v);
    }
    if let Some(v) = d.outcome {
        cfg.columns.outcome = v;
    }
    if let Some(v) = d.treatment {
        cfg.columns.treatment = v;
    }
    if let Some(v) = d.covariates {
        cfg.columns.covariates = Some(v);
    }
    if let Some(v) = d.treated_values {
        cfg.columns.treated_values = v;
    }
    if let Some(v) = d.control_values {
        cfg.columns.control_values = v;
    }
    apply_model(cfg, d.model);
}

fn apply_sim(cfg: &mut RunConfig, a: SimArgs) {
    let s = &mut cfg.simulation;
    if let Some(v) = a.scenario {
        s.scenario.scenario = v;
    }
    if let Some(v) = a.n {
        s.scenario.n = v;
    }
    if let Some(v) = a.p {
        s.scenario.p = v;
    }
    if let Some(v) = a.xi {
        s.scenario.xi = v;
    }
    if let Some(v) = a.reps {
        s.reps = v;
    }
    if let Some(v) = a.methods {
        s.methods = v;
    }
    if let Some(v) = a.oracle_draws {
        s.oracle_draws = v;
    }
    if let Some(v) = a.reference_n {
        s.reference_n = v;
    }
    if let Some(v) = a.alpha {
        s.alpha = v;
    }
    if a.no_value_inference {
        s.value_inference = false;
    }
    if a.no_achieved_value {
        s.achieved_value = false;
    }
    if let Some(v) = a.dump {
        s.dump = Some(v);
    }
    if let Some(v) = a.coordinates {
        cfg.coordinates = Some(v);
    }
    apply_model(cfg, a.model);
}

fn run(cli: Cli) -> Result<Option<String>, Failure> {
    if let Some(t) = cli.threads {
        if t == 0 {
            return Err(Failure::validation("--threads must be at least 1"));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(t)
            .build_global()
            .map_err(|e| Failure::validation(format!("thread pool: {e}")))?;
    }
    let mut cfg = match &cli.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    let command = match cli.command {
        Command::Fit(d) => {
            apply_data(&mut cfg, d);
            commands::fit
        }
        Command::Test { data, coordinates, variance_at } => {
            apply_data(&mut cfg, data);
            if let Some(v) = coordinates {
                cfg.coordinates = Some(v);
            }
            if let Some(v) = variance_at {
                cfg.inference.variance_at = v;
            }
            commands::test
        }
        Command::Value { data, fit_fraction } => {
            apply_data(&mut cfg, data);
            if let Some(v) = fit_fraction {
                cfg.value.fit_fraction = v;
            }
            commands::value
        }
        Command::Simulate(a) => {
            apply_sim(&mut cfg, a);
            commands::simulate
        }
    };
    if cli.print_config {
        return Ok(Some(serde_json::to_string_pretty(&cfg).expect("config serializes") + "\n"));
    }
    match command(&cfg)? {
        Sink::Stdout(text) => Ok(Some(text)),
        Sink::Files(paths) => {
            for p in paths {
                eprintln!("wrote {}", p.display());
            }
            Ok(None)
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            // --help and --version
            print!("{e}");
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let f = Failure::validation(e.to_string().trim_end());
            eprintln!("{}", f.to_json());
            return ExitCode::from(f.exit_code() as u8);
        }
    };
    match run(cli) {
        Ok(text) => {
            if let Some(text) = text {
                print!("{text}");
            }
            ExitCode::SUCCESS
        }
        Err(f) => {
            eprintln!("{}", f.to_json());
            ExitCode::from(f.exit_code() as u8)
        }
    }
}
