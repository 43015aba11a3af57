use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use nutaxis_cli::commands::{
    cmd_eps_study, cmd_run, cmd_sweep, exponent_table, inequality_suite, write_exponent_table,
    write_inequality_report, write_verify_report, Recursion,
};
use nutaxis_cli::{load_config, CliError, RunConfig};
use nutaxis_core::exponents::verify_regime_lemmas;

#[derive(Parser)]
#[command(name = "nutaxis", version, about = "Finite-volume laboratory for a degenerate nutrient taxis system")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Integrate one configuration and write monitors, residuals and snapshots.
    Run {
        config: PathBuf,
        /// Overrides the config's output directory.
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Repeat a run for each alpha in parallel.
    Sweep {
        config: PathBuf,
        #[arg(long, value_delimiter = ',', num_args = 0..)]
        alphas: Vec<f64>,
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Compare final states across a nonincreasing list of epsilon values.
    EpsStudy {
        config: PathBuf,
        #[arg(long, value_delimiter = ',', num_args = 1..)]
        eps: Vec<f64>,
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Randomized log-Hessian and Sobolev product batches as JSON lines.
    VerifyInequalities {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 100)]
        samples: usize,
    },
    /// Print an exponent recursion as CSV.
    Exponents {
        #[arg(long, value_enum)]
        recursion: Recursion,
        /// m₀, m̂₀ or q₀.
        #[arg(long)]
        start: f64,
        #[arg(long)]
        alpha: f64,
        #[arg(long, default_value_t = 10)]
        steps: usize,
    },
    /// Check the exponent recursions on random seeds; JSON lines.
    VerifyExponents {
        #[arg(long, default_value_t = 1000)]
        samples: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

fn config_with_output(path: &PathBuf, output: Option<PathBuf>) -> Result<RunConfig, CliError> {
    let mut cfg = load_config(path)?;
    if let Some(o) = output {
        cfg.output = o;
    }
    Ok(cfg)
}

fn execute(cli: Cli) -> Result<bool, CliError> {
    let stdout = std::io::stdout();
    let mut out = stdout.lock();
    match cli.command {
        Command::Run { config, output } => {
            let cfg = config_with_output(&config, output)?;
            let res = cmd_run(&cfg)?;
            let t = &res.trajectory;
            writeln!(
                out,
                "completed t={} steps={} rejections={} output={}",
                t.final_state.t,
                t.steps,
                t.rejections,
                cfg.output.display()
            )?;
            Ok(true)
        }
        Command::Sweep { config, alphas, output } => {
            let cfg = config_with_output(&config, output)?;
            let rows = cmd_sweep(&cfg, &alphas)?;
            for r in &rows {
                let status = match &r.outcome {
                    Ok(_) => "ok".to_string(),
                    Err(e) => format!("failed: {e}"),
                };
                writeln!(out, "alpha={} regime={} {status}", r.alpha, r.regime.label())?;
            }
            Ok(rows.iter().all(|r| r.outcome.is_ok()))
        }
        Command::EpsStudy { config, eps, output } => {
            let cfg = config_with_output(&config, output)?;
            let study = cmd_eps_study(&cfg, &eps)?;
            for d in &study.diffs {
                writeln!(out, "{}", serde_json::to_string(d)?)?;
            }
            Ok(study.failures.iter().all(Option::is_none))
        }
        Command::VerifyInequalities { seed, samples } => {
            let report = inequality_suite(seed, samples)?;
            write_inequality_report(&report, &mut out)?;
            Ok(report.log_hessian.iter().all(|b| b.failures == 0))
        }
        Command::Exponents { recursion, start, alpha, steps } => {
            write_exponent_table(&exponent_table(recursion, start, alpha, steps), &mut out)?;
            Ok(true)
        }
        Command::VerifyExponents { samples, seed } => {
            let report = verify_regime_lemmas(samples, seed);
            write_verify_report(&report, &mut out)?;
            Ok(report.total_violations() == 0)
        }
    }
}

fn main() -> ExitCode {
    match execute(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
