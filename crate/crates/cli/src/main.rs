//! Command-line driver: `regge-curv verify --config c.json` runs the
//! verification suite and emits a JSON report; `regge-curv converge --config
//! c.json --out results.csv` runs the convergence study and emits a CSV plus
//! a plot-recipe template.
//!
//! Exit codes: 0 pass, 1 check/solver failure, 2 configuration error.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use regge_curv::driver::{plot_template, run_convergence, run_verify, ExperimentConfig};
use regge_curv::Error;

#[derive(Parser)]
#[command(name = "regge-curv", version, about = "Distributional curvature and connection of Regge metrics")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run the verification suite and write a JSON report.
    Verify {
        #[arg(long)]
        config: PathBuf,
        /// Report path (defaults to the config's `out` key, else stdout).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run the convergence study and write the rate table CSV.
    Converge {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

fn load_config(path: &PathBuf) -> Result<ExperimentConfig, String> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| format!("cannot read {}: {e}", path.display()))?;
    ExperimentConfig::from_json(&text).map_err(|e| e.to_string())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match cli.cmd {
        Cmd::Verify { config, out } => {
            let cfg = match load_config(&config) {
                Ok(c) => c,
                Err(e) => {
                    eprintln!("config error: {e}");
                    return ExitCode::from(2);
                }
            };
            let report = match run_verify(&cfg) {
                Ok(r) => r,
                Err(Error::Config(e)) => {
                    eprintln!("config error: {e}");
                    return ExitCode::from(2);
                }
                Err(e) => {
                    eprintln!("verification aborted: {e}");
                    return ExitCode::from(1);
                }
            };
            for c in &report.checks {
                println!(
                    "{} {}: error {:.3e} (tol {:.1e}{})",
                    if c.passed { "PASS" } else { "FAIL" },
                    c.name,
                    c.error,
                    c.tolerance,
                    c.observed_order
                        .map(|o| format!(", order {o:.2}"))
                        .unwrap_or_default()
                );
            }
            let json = report.to_json();
            let dest = out.or_else(|| cfg.out.as_ref().map(PathBuf::from));
            match dest {
                Some(p) => {
                    if let Err(e) = std::fs::write(&p, &json) {
                        eprintln!("cannot write {}: {e}", p.display());
                        return ExitCode::from(1);
                    }
                    println!("report written to {}", p.display());
                }
                None => println!("{json}"),
            }
            if report.passed {
                ExitCode::SUCCESS
            } else {
                ExitCode::from(1)
            }
        }
        Cmd::Converge { config, out } => {
            let cfg = match load_config(&config) {
                Ok(c) => c,
                Err(e) => {
                    eprintln!("config error: {e}");
                    return ExitCode::from(2);
                }
            };
            let result = match run_convergence(&cfg) {
                Ok(r) => r,
                Err(Error::Config(e)) => {
                    eprintln!("config error: {e}");
                    return ExitCode::from(2);
                }
                Err(e) => {
                    eprintln!("convergence study failed: {e}");
                    return ExitCode::from(1);
                }
            };
            let csv = result.to_csv();
            if let Err(e) = std::fs::write(&out, &csv) {
                eprintln!("cannot write {}: {e}", out.display());
                return ExitCode::from(1);
            }
            let plot_path = out.with_extension("plot.txt");
            let _ = std::fs::write(
                &plot_path,
                plot_template(&out.file_name().unwrap_or_default().to_string_lossy()),
            );
            print!("{csv}");
            println!("csv written to {}; plot recipe at {}", out.display(), plot_path.display());
            ExitCode::SUCCESS
        }
    }
}
