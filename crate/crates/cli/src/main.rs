use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use adleak_core::experiments::{self, ExperimentConfig};
use adleak_core::Error;
use clap::{Args, Parser, Subcommand, ValueEnum};
use toml::{Table, Value};

#[derive(Parser)]
#[command(name = "adleak", version, about = "Sample-complexity experiments for targeted advertising leakage")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a sample-complexity sweep and write CSV.
    Sweep {
        #[arg(long, value_enum)]
        kind: Option<SweepKind>,
        /// Master seed (required).
        #[arg(long)]
        seed: u64,
        /// CSV destination; stdout when absent.
        #[arg(long)]
        output: Option<PathBuf>,
        #[command(flatten)]
        common: Common,
    },
    /// Print Hellinger bounds and expansion factors as JSON.
    Bounds {
        #[arg(long)]
        seed: Option<u64>,
        #[command(flatten)]
        common: Common,
    },
    /// Violation-witness and Pufferfish verdicts as JSON.
    Audit {
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        target_tv: Option<f64>,
        #[arg(long)]
        audit_trials: Option<u64>,
        #[command(flatten)]
        common: Common,
    },
    /// Estimate the advantage of one arm at one campaign size.
    Game {
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        arm: String,
        /// Marginal of the test bit under D_1.
        #[arg(long)]
        marginal: f64,
        #[arg(long)]
        n: u64,
        #[arg(long, default_value_t = 1000)]
        trials: u64,
        #[command(flatten)]
        common: Common,
    },
    /// Render a sweep CSV as an SVG line chart.
    Plot {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        output: PathBuf,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum SweepKind {
    Tv,
    Epsilon,
    AlphaE,
    AlphaT,
}

impl SweepKind {
    fn name(self) -> &'static str {
        match self {
            SweepKind::Tv => "tv_sweep",
            SweepKind::Epsilon => "epsilon_sweep",
            SweepKind::AlphaE => "alpha_e_sweep",
            SweepKind::AlphaT => "alpha_t_sweep",
        }
    }
}

/// Overrides for top-level config fields.
#[derive(Args)]
struct Common {
    /// TOML config file; flags override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    ell: Option<i64>,
    #[arg(long)]
    b_test: Option<i64>,
    #[arg(long)]
    level: Option<f64>,
    #[arg(long)]
    target_power: Option<f64>,
    #[arg(long)]
    trials_per_point: Option<i64>,
    #[arg(long)]
    rounds_per_user: Option<i64>,
    #[arg(long)]
    ceiling: Option<i64>,
}

enum Failure {
    Config(String),
    Ceiling(String),
    Internal(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::Config(_)
            | Error::Usage(_)
            | Error::Parse { .. }
            | Error::UndefinedSampleComplexity(_)
            | Error::OutOfRegime(_)
            | Error::Degenerate(_) => Failure::Config(e.to_string()),
            Error::Ceiling { .. } | Error::InfeasibleSecret(_) => Failure::Ceiling(e.to_string()),
            other => Failure::Internal(other.to_string()),
        }
    }
}

fn load(common: &Common, experiment: &str, seed: Option<u64>, file_only_experiment: bool) -> Result<ExperimentConfig, Failure> {
    let mut table = match &common.config {
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| Failure::Config(format!("{}: {e}", p.display())))?;
            text.parse::<Table>().map_err(|e| Failure::Config(format!("{}: {e}", p.display())))?
        }
        None => Table::new(),
    };
    if !(file_only_experiment && table.contains_key("experiment")) {
        table.insert("experiment".into(), Value::String(experiment.into()));
    }
    match seed {
        Some(s) => {
            let s = i64::try_from(s).map_err(|_| Failure::Config("seed must fit in a signed 64-bit integer".into()))?;
            table.insert("seed".into(), Value::Integer(s));
        }
        None => {
            table.entry("seed").or_insert(Value::Integer(0));
        }
    }
    let ints = [
        ("ell", common.ell),
        ("b_test", common.b_test),
        ("trials_per_point", common.trials_per_point),
        ("rounds_per_user", common.rounds_per_user),
        ("ceiling", common.ceiling),
    ];
    for (k, v) in ints {
        if let Some(v) = v {
            table.insert(k.into(), Value::Integer(v));
        }
    }
    for (k, v) in [("level", common.level), ("target_power", common.target_power)] {
        if let Some(v) = v {
            table.insert(k.into(), Value::Float(v));
        }
    }
    Ok(ExperimentConfig::from_toml_str(&table.to_string())?)
}

fn print_json<T: serde::Serialize>(value: &T) -> Result<(), Failure> {
    let text = serde_json::to_string_pretty(value).map_err(|e| Failure::Internal(e.to_string()))?;
    match writeln!(std::io::stdout().lock(), "{text}") {
        Err(e) if e.kind() != std::io::ErrorKind::BrokenPipe => Err(Failure::Internal(e.to_string())),
        _ => Ok(()),
    }
}

fn run(cli: Cli) -> Result<(), Failure> {
    match cli.command {
        Command::Sweep { kind, seed, output, common } => {
            let name = kind.map_or("tv_sweep", SweepKind::name);
            let cfg = load(&common, name, Some(seed), kind.is_none())?;
            let rows = experiments::run_sweep(&cfg)?;
            for r in rows.iter().filter(|r| r.minimal_n.is_none()) {
                eprintln!("warning: arm {} at {} = {} reached the ceiling", r.arm, r.param_name, r.param_value);
            }
            let dest = output.or_else(|| cfg.output.as_ref().map(PathBuf::from));
            match dest {
                Some(p) => {
                    let file = std::fs::File::create(&p).map_err(|e| Failure::Internal(format!("{}: {e}", p.display())))?;
                    experiments::write_csv(&rows, file)?;
                }
                None => experiments::write_csv(&rows, std::io::stdout().lock())?,
            }
        }
        Command::Bounds { seed, common } => {
            let cfg = load(&common, "bounds", seed, false)?;
            print_json(&experiments::run_bounds(&cfg)?)?;
        }
        Command::Audit { seed, target_tv, audit_trials, common } => {
            let mut cfg = load(&common, "audit", seed, false)?;
            if let Some(t) = target_tv {
                cfg.audit.target_tv = t;
            }
            if let Some(t) = audit_trials {
                cfg.audit.trials = t;
            }
            print_json(&experiments::run_audit(&cfg)?)?;
        }
        Command::Game { seed, arm, marginal, n, trials, common } => {
            let cfg = load(&common, "tv_sweep", seed, true)?;
            print_json(&experiments::run_game(&cfg, &arm, marginal, n, trials)?)?;
        }
        Command::Plot { input, output } => experiments::emit_plot(&input, &output).map_err(|e| match e {
            Error::Io(_) => Failure::Config(e.to_string()),
            other => other.into(),
        })?,
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Config(m)) => {
            eprintln!("config error: {m}");
            ExitCode::from(2)
        }
        Err(Failure::Ceiling(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(3)
        }
        Err(Failure::Internal(m)) => {
            eprintln!("internal error: {m}");
            ExitCode::from(4)
        }
    }
}
