use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use pjko_cli::exec::{self, Axis, Status};
use pjko_cli::{CliError, RunConfig};

#[derive(Parser)]
#[command(name = "pjko", version, about = "p-JKO minimizing movements with dissipation diagnostics")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one configuration.
    Run { config: PathBuf },
    /// Run a configuration over a list of tau, eps or grid values.
    Sweep {
        config: PathBuf,
        #[arg(long)]
        axis: Axis,
        #[arg(long, value_delimiter = ',', required = true)]
        values: Vec<f64>,
    },
    /// Run every validation suite at desk scale.
    Validate,
    /// Print diagnostics.csv from a run directory as a table.
    Report { dir: PathBuf },
}

fn code(s: Status) -> ExitCode {
    ExitCode::from(s.exit_code() as u8)
}

fn config_error(e: CliError) -> ExitCode {
    eprintln!("{e}");
    ExitCode::from(2)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match cli.command {
        Command::Run { config } => {
            let cfg = match RunConfig::load(&config) {
                Ok(c) => c,
                Err(e) => return config_error(e),
            };
            let out = exec::execute_run(&cfg);
            let s = &out.summary;
            println!("steps {}/{}", s.steps, s.expected_steps);
            if let Some(g) = s.global_residual {
                println!("global residual {g:.6e}");
            }
            if let Some(y) = s.young_gap {
                println!("young gap {y:.6e}");
            }
            if let Some(l) = s.oracle_max_l1 {
                println!("oracle max L1 {l:.6e}");
            }
            if let Some(e) = out.manifest.get("error").and_then(|v| v.as_str()) {
                eprintln!("{e}");
            }
            for f in &out.failures {
                eprintln!("FAIL {}: {}", f.assertion, f.detail);
            }
            println!("{} -> {}", format!("{:?}", out.status).to_lowercase(), out.output.display());
            code(out.status)
        }
        Command::Sweep { config, axis, values } => {
            let cfg = match RunConfig::load(&config) {
                Ok(c) => c,
                Err(e) => return config_error(e),
            };
            let sw = match exec::execute_sweep(&cfg, axis, &values) {
                Ok(s) => s,
                Err(e) => return config_error(e),
            };
            for l in &sw.legs {
                println!("{:>12} {:<6} steps {}", l.value, format!("{:?}", l.outcome.status).to_lowercase(), l.outcome.summary.steps);
                for f in &l.outcome.failures {
                    eprintln!("  FAIL {}: {}", f.assertion, f.detail);
                }
            }
            for t in &sw.trend_failures {
                eprintln!("FAIL trend {t}");
            }
            code(sw.status)
        }
        Command::Validate => {
            let (results, table) = exec::validate();
            print!("{table}");
            let failed = results.iter().filter(|r| !r.passed).count();
            println!("{} suites, {failed} failed", results.len());
            ExitCode::from(if failed == 0 { 0 } else { 1 })
        }
        Command::Report { dir } => match exec::report(&dir) {
            Ok(t) => {
                print!("{t}");
                ExitCode::SUCCESS
            }
            Err(e) => config_error(e),
        },
    }
}
