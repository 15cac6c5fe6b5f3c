//! `wsncalc`: worst-case QoS bounds for regulated flows over rate-latency
//! sensor paths.
//!
//! Exit codes: 0 success, 2 validation/replication failure, 3 instability,
//! 4 input error.

use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use wsncalc_core::node::Convention;
use wsncalc_core::report::{
    replicate, replication_table, run_report, sweep, validate, ReportError, Scope, SweepParam,
};
use wsncalc_core::scenario::{builtin_scenario, parse_scenario, ScenarioDocument, BUILTIN_NAMES};

#[derive(Parser)]
#[command(
    name = "wsncalc",
    version,
    about = "Worst-case backlog, delay and effective-bandwidth bounds for sensor-network paths"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Compute node and path bounds for a scenario file
    Report {
        /// Scenario file (JSON)
        file: PathBuf,
        /// Which bounds to include
        #[arg(long, default_value = "all")]
        scope: Scope,
        /// Residual-latency convention override (strict|paper)
        #[arg(long, value_parser = parse_convention)]
        convention: Option<Convention>,
        /// Output format
        #[arg(long, default_value = "table")]
        format: Format,
    },
    /// Recompute bounds across a parameter range and emit CSV
    Sweep {
        /// Scenario file (JSON)
        file: PathBuf,
        /// Parameter to vary: R, T, d, N or H
        #[arg(long)]
        param: SweepParam,
        #[arg(long)]
        from: f64,
        #[arg(long)]
        to: f64,
        #[arg(long)]
        step: f64,
        /// Output CSV path (stdout when omitted)
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Check every closed-form bound against the grid oracle and a
    /// greedy-source simulation
    Validate {
        /// Scenario file (JSON)
        file: PathBuf,
        /// Grid step in ms
        #[arg(long, default_value_t = 0.05)]
        grid_step: f64,
        /// Horizon as a multiple of the largest delay bound
        #[arg(long, default_value_t = 4.0)]
        horizon_factor: f64,
    },
    /// Run all bundled scenarios and diff against their pinned expected
    /// values
    ReplicatePaper {
        /// Directory to write the scenario files and reports into
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, clap::ValueEnum)]
enum Format {
    Table,
    Csv,
    Json,
}

fn parse_convention(s: &str) -> Result<Convention, String> {
    match s {
        "strict" => Ok(Convention::Strict),
        "paper" => Ok(Convention::Paper),
        other => Err(format!("unknown convention '{other}' (strict|paper)")),
    }
}

fn load_scenario(path: &PathBuf) -> Result<ScenarioDocument, String> {
    let text = fs::read_to_string(path)
        .map_err(|e| format!("cannot read {}: {e}", path.display()))?;
    parse_scenario(&text).map_err(|e| format!("{}: {e}", path.display()))
}

fn report_exit(err: ReportError) -> ExitCode {
    eprintln!("error: {err}");
    ExitCode::from(err.exit_code() as u8)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match cli.command {
        Command::Report { file, scope, convention, format } => {
            let mut doc = match load_scenario(&file) {
                Ok(d) => d,
                Err(e) => {
                    eprintln!("error: {e}");
                    return ExitCode::from(4);
                }
            };
            if let Some(conv) = convention {
                doc.convention = conv;
            }
            match run_report(&doc, scope) {
                Ok(report) => {
                    let text = match format {
                        Format::Table => report.to_table(),
                        Format::Csv => report.to_csv(),
                        Format::Json => report.to_json(),
                    };
                    print!("{text}");
                    ExitCode::SUCCESS
                }
                Err(e) => report_exit(e),
            }
        }
        Command::Sweep { file, param, from, to, step, out } => {
            let doc = match load_scenario(&file) {
                Ok(d) => d,
                Err(e) => {
                    eprintln!("error: {e}");
                    return ExitCode::from(4);
                }
            };
            match sweep(&doc, param, from, to, step) {
                Ok(csv) => {
                    if let Some(path) = out {
                        if let Err(e) = fs::write(&path, csv) {
                            eprintln!("error: cannot write {}: {e}", path.display());
                            return ExitCode::from(4);
                        }
                    } else {
                        print!("{csv}");
                    }
                    ExitCode::SUCCESS
                }
                Err(e) => report_exit(e),
            }
        }
        Command::Validate { file, grid_step, horizon_factor } => {
            let doc = match load_scenario(&file) {
                Ok(d) => d,
                Err(e) => {
                    eprintln!("error: {e}");
                    return ExitCode::from(4);
                }
            };
            match validate(&doc, grid_step, horizon_factor) {
                Ok(report) => {
                    print!("{}", report.to_table());
                    if report.passed() {
                        ExitCode::SUCCESS
                    } else {
                        ExitCode::from(2)
                    }
                }
                Err(e) => report_exit(e),
            }
        }
        Command::ReplicatePaper { out } => {
            let rows = match replicate() {
                Ok(rows) => rows,
                Err(e) => return report_exit(e),
            };
            print!("{}", replication_table(&rows));
            if let Some(dir) = out {
                if let Err(e) = write_replication_artifacts(&dir) {
                    eprintln!("error: {e}");
                    return ExitCode::from(4);
                }
                println!("scenario files and reports written to {}", dir.display());
            }
            if rows.iter().all(|r| r.pass) {
                ExitCode::SUCCESS
            } else {
                ExitCode::from(2)
            }
        }
    }
}

fn write_replication_artifacts(dir: &PathBuf) -> Result<(), String> {
    fs::create_dir_all(dir).map_err(|e| format!("cannot create {}: {e}", dir.display()))?;
    for name in BUILTIN_NAMES {
        let text = builtin_scenario(name).expect("bundled scenario");
        let scenario_path = dir.join(format!("{name}.json"));
        fs::write(&scenario_path, text)
            .map_err(|e| format!("cannot write {}: {e}", scenario_path.display()))?;
        let doc = parse_scenario(text).map_err(|e| format!("{name}: {e}"))?;
        let report = run_report(&doc, Scope::All).map_err(|e| format!("{name}: {e}"))?;
        let report_path = dir.join(format!("{name}.report.json"));
        fs::write(&report_path, report.to_json())
            .map_err(|e| format!("cannot write {}: {e}", report_path.display()))?;
    }
    Ok(())
}
