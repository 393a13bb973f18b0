use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use serde_json::json;

use cbi::estimate::{cls_rho_betabar, scaled_errors, Regime};
use cbi::harness::{run_experiment, sample_limit_vectors, write_atomic, write_report, ExperimentConfig};
use cbi::model::{derive, CbiParams};
use cbi::moments::{centered_moments, conditional_mean, growth_bounds_check, DEFAULT_STEP};
use cbi::rng::{derive_key, domain};
use cbi::simulate::{simulate_skeleton, Scheme, SimConfig, Skeleton, DEFAULT_GRID_POINTS, DEFAULT_SUBSTEPS};
use cbi::{Error, Result};

const PARAMS_HELP: &str = r#"parameters file (JSON):
  {
    "c": 0.5,                       diffusion coefficient, >= 0
    "beta": 1.0,                    immigration drift, >= 0
    "b": -0.25,                     branching drift (any real)
    "nu": [{"z": 1.0, "rate": 0.5}], immigration jump atoms (optional)
    "mu": [{"z": 2.0, "rate": 0.25}] branching jump atoms (optional)
  }
every z and rate must be positive and finite; unknown keys are rejected"#;

#[derive(Parser)]
#[command(name = "cbi", version, about = "Simulation and least squares estimation for critical CBI processes")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate a unit-spaced skeleton X_0..X_n and write it as CSV
    Simulate {
        #[arg(long)]
        params: PathBuf,
        #[arg(long)]
        n: usize,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = DEFAULT_SUBSTEPS)]
        substeps: u32,
        #[arg(long, default_value = "auto")]
        scheme: Scheme,
    },
    /// Conditional least squares estimates from a skeleton CSV
    Estimate {
        #[arg(long = "in")]
        input: PathBuf,
        /// True parameters; adds scaled errors to the output
        #[arg(long)]
        params: Option<PathBuf>,
        #[arg(long, default_value = "general-critical")]
        regime: Regime,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Sample the limit law of the scaled estimation errors
    Limit {
        #[arg(long)]
        params: PathBuf,
        #[arg(long)]
        reps: usize,
        #[arg(long, default_value_t = DEFAULT_GRID_POINTS)]
        grid: usize,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        workers: usize,
    },
    /// Run a Monte Carlo experiment described by a JSON config
    Experiment {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, default_value_t = 0)]
        workers: usize,
        /// Overrides output_path from the config
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Centered moments E[(X_t - E X_t)^j], j = 1..q, from X_0 = 0
    Moments {
        #[arg(long)]
        params: PathBuf,
        #[arg(long)]
        t: f64,
        #[arg(long)]
        q: usize,
        #[arg(long, default_value_t = DEFAULT_STEP)]
        step: f64,
    },
    /// Growth diagnostics for E X_k^q and E M_k^(2p) in the critical case
    Growth {
        #[arg(long)]
        params: PathBuf,
        #[arg(long)]
        q: usize,
        #[arg(long = "n-max")]
        n_max: usize,
    },
}

fn read_params(path: &Path) -> Result<CbiParams> {
    let text = fs::read_to_string(path)?;
    CbiParams::from_json(&text).inspect_err(|_| eprintln!("{PARAMS_HELP}"))
}

fn resolve_seed(seed: Option<u64>) -> u64 {
    let seed = seed.unwrap_or_else(rand::random);
    println!("{}", json!({ "seed": seed }));
    seed
}

fn print_json<T: serde::Serialize>(value: &T) -> Result<()> {
    println!("{}", serde_json::to_string_pretty(value)?);
    Ok(())
}

fn run(command: Command) -> Result<()> {
    match command {
        Command::Simulate { params, n, seed, out, substeps, scheme } => {
            let params = read_params(&params)?;
            let seed = resolve_seed(seed);
            let cfg = SimConfig { substeps_per_unit: substeps, scheme };
            let skeleton = simulate_skeleton(&params, n, &cfg, seed)?;
            write_atomic(&out, skeleton.to_csv_string().as_bytes())
        }
        Command::Estimate { input, params, regime, out } => {
            let file = fs::File::open(&input)?;
            let skeleton = Skeleton::read_csv(std::io::BufReader::new(file))?;
            let est = cls_rho_betabar(&skeleton)?;
            let mut value = serde_json::to_value(est)?;
            value["n"] = json!(skeleton.n());
            if let Some(path) = params {
                let d = derive(&read_params(&path)?);
                value["scaled_errors"] = match scaled_errors(&est, &d, skeleton.n(), regime) {
                    Ok(e) => json!(e),
                    Err(Error::MissingEstimate) => serde_json::Value::Null,
                    Err(e) => return Err(e),
                };
            }
            match out {
                Some(path) => write_atomic(&path, format!("{}\n", serde_json::to_string_pretty(&value)?).as_bytes()),
                None => print_json(&value),
            }
        }
        Command::Limit { params, reps, grid, seed, out, workers } => {
            let d = derive(&read_params(&params)?);
            if reps == 0 {
                return Err(Error::InvalidConfig("reps must be positive".into()));
            }
            let seed = resolve_seed(seed);
            let key = derive_key(seed, domain::LIMIT, grid as u64);
            let (samples, discards) = sample_limit_vectors(d.beta_tilde, d.c_limit, grid, reps, key, workers)?;
            let mut csv = String::from("rep,e1,e2\n");
            for (r, s) in samples.iter().enumerate() {
                csv.push_str(&format!("{r},{},{}\n", s[0], s[1]));
            }
            write_atomic(&out, csv.as_bytes())?;
            if discards > 0 {
                eprintln!("discarded {discards} of {reps} draws with a degenerate denominator");
            }
            Ok(())
        }
        Command::Experiment { config, workers, out } => {
            let text = fs::read_to_string(&config)?;
            let mut cfg = ExperimentConfig::from_json(&text).inspect_err(|_| eprintln!("{PARAMS_HELP}"))?;
            if let Some(path) = out {
                cfg.output_path = Some(path.display().to_string());
            }
            cfg = cfg.resolve_seed();
            resolve_seed(cfg.seed);
            let report = run_experiment(cfg, workers)?;
            match &report.config_echo.output_path {
                Some(path) => {
                    write_report(&report, Path::new(path))?;
                    Ok(())
                }
                None => {
                    print!("{}", report.to_json());
                    Ok(())
                }
            }
        }
        Command::Moments { params, t, q, step } => {
            let params = read_params(&params)?;
            let cm = centered_moments(&params, t, q, step)?;
            let mean = conditional_mean(&derive(&params), 0.0, t);
            print_json(&json!({ "t": t, "mean": mean, "centered": cm.values }))
        }
        Command::Growth { params, q, n_max } => {
            let params = read_params(&params)?;
            print_json(&growth_bounds_check(&params, q, n_max)?)
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_numeric() { 2 } else { 1 })
        }
    }
}
