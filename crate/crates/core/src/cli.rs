//! Command-line front end.
//!
//! Exit codes: 0 success, 1 configuration or usage error, 2 runtime
//! failure, 3 audit failure.

use std::ffi::OsString;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use crate::config::{ConfigError, ExperimentConfig};
use crate::harness::{audit_uniformity, AuditLog};
use crate::orchestrator::{output_dir, persist, run_experiment, ExperimentOutcome, OrchestratorError};
use crate::types::Mode;

pub const EXIT_OK: u8 = 0;
pub const EXIT_CONFIG: u8 = 1;
pub const EXIT_RUNTIME: u8 = 2;
pub const EXIT_AUDIT_FAILED: u8 = 3;

/// Environment variable naming the default output root.
pub const OUT_ENV: &str = "FEDSHIELD_OUT";

/// Client counts compared by `table`.
pub const TABLE_CLIENTS: [usize; 2] = [10, 20];

#[derive(Debug, Parser)]
#[command(name = "fedshield", version, about = "Federated averaging with local DP and SecAgg+, simulated")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run one experiment and write its reports.
    Run(ExperimentArgs),
    /// Run all three modes for 10 and 20 clients and print an accuracy table.
    Table(ExperimentArgs),
    /// Check that every client's masked inputs in a log look uniform.
    Audit(AuditArgs),
    /// Print per-phase message counts of a log.
    Summarize {
        logfile: PathBuf,
    },
}

#[derive(Debug, Args)]
pub struct ExperimentArgs {
    /// Configuration file (`key = value` lines).
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Override one key, e.g. `--set mode=Plain`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
    /// Output root; defaults to the config's `out`, then $FEDSHIELD_OUT, then `out`.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct AuditArgs {
    pub logfile: PathBuf,
    /// Configuration supplying the field parameters.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
}

/// Entry point for the binary.
pub fn main() -> ExitCode {
    ExitCode::from(run_cli(std::env::args_os()))
}

/// Parses `args` (program name first) and executes the command.
pub fn run_cli<I, T>(args: I) -> u8
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_CONFIG } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    match cli.command {
        Command::Run(a) => cmd_run(&a),
        Command::Table(a) => cmd_table(&a),
        Command::Audit(a) => cmd_audit(&a),
        Command::Summarize { logfile } => cmd_summarize(&logfile),
    }
}

fn load_config(path: Option<&Path>, overrides: &[String], seed: Option<u64>) -> Result<ExperimentConfig, ConfigError> {
    let mut cfg = ExperimentConfig::default();
    if let Some(p) = path {
        cfg.apply_file(p)?;
    }
    for o in overrides {
        cfg.apply_override(o)?;
    }
    if let Some(s) = seed {
        cfg.seed = s;
    }
    cfg.resolve()?;
    Ok(cfg)
}

fn out_root(args: &ExperimentArgs, cfg: &ExperimentConfig) -> PathBuf {
    args.out
        .clone()
        .or_else(|| cfg.out.as_ref().map(PathBuf::from))
        .or_else(|| std::env::var_os(OUT_ENV).map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("out"))
}

fn config_or_exit(args: &ExperimentArgs) -> Result<ExperimentConfig, u8> {
    load_config(args.config.as_deref(), &args.overrides, args.seed).map_err(|e| {
        eprintln!("error: {e}");
        EXIT_CONFIG
    })
}

fn execute(cfg: &ExperimentConfig, root: &Path) -> Result<(ExperimentOutcome, PathBuf), OrchestratorError> {
    let outcome = run_experiment(cfg)?;
    let dir = output_dir(root, cfg);
    persist(&dir, cfg, &outcome)?;
    Ok((outcome, dir))
}

pub fn cmd_run(args: &ExperimentArgs) -> u8 {
    let cfg = match config_or_exit(args) {
        Ok(c) => c,
        Err(code) => return code,
    };
    match execute(&cfg, &out_root(args, &cfg)) {
        Ok((outcome, dir)) => {
            let failed = outcome.reports.iter().filter(|r| r.status != crate::orchestrator::RoundStatus::Completed).count();
            match outcome.final_accuracy() {
                Some(acc) => println!(
                    "{} {}: final accuracy {:.2}% after {} rounds ({} failed)",
                    cfg.name,
                    cfg.mode,
                    100.0 * acc,
                    outcome.reports.len(),
                    failed
                ),
                None => println!("{} {}: no rounds run", cfg.name, cfg.mode),
            }
            println!("reports: {}", dir.join("reports.jsonl").display());
            EXIT_OK
        }
        Err(e) => {
            eprintln!("error: {e}");
            EXIT_RUNTIME
        }
    }
}

/// Formats final accuracies (percent) as rows of client counts and
/// columns of modes.
pub fn format_table(rows: &[(usize, [f64; 3])]) -> String {
    let mut s = format!("{:<8}", "clients");
    for m in Mode::ALL {
        let _ = write!(s, "  {:>12}", m.column_label());
    }
    s.push('\n');
    for (n, accs) in rows {
        let _ = write!(s, "{n:<8}");
        for a in accs {
            let _ = write!(s, "  {a:>12.2}");
        }
        s.push('\n');
    }
    s
}

pub fn cmd_table(args: &ExperimentArgs) -> u8 {
    let base = match config_or_exit(args) {
        Ok(c) => c,
        Err(code) => return code,
    };
    let root = out_root(args, &base);
    let mut rows = Vec::new();
    for n in TABLE_CLIENTS {
        let mut accs = [0.0; 3];
        for (k, mode) in Mode::ALL.into_iter().enumerate() {
            let mut cfg = base.clone();
            cfg.num_clients = n;
            cfg.mode = mode;
            cfg.name = format!("{}-n{n}", base.name);
            if let Err(e) = cfg.resolve() {
                eprintln!("error: {e}");
                return EXIT_CONFIG;
            }
            match execute(&cfg, &root) {
                Ok((outcome, _)) => accs[k] = 100.0 * outcome.final_accuracy().unwrap_or(0.0),
                Err(e) => {
                    eprintln!("error: {n} clients, {mode}: {e}");
                    return EXIT_RUNTIME;
                }
            }
        }
        rows.push((n, accs));
    }
    let table = format_table(&rows);
    print!("{table}");
    let path = root.join(&base.name).join("table.txt");
    if let Err(e) = std::fs::create_dir_all(root.join(&base.name)).and_then(|_| std::fs::write(&path, &table)) {
        eprintln!("error: cannot write {}: {e}", path.display());
        return EXIT_RUNTIME;
    }
    EXIT_OK
}

pub fn cmd_audit(args: &AuditArgs) -> u8 {
    let cfg = match load_config(args.config.as_deref(), &args.overrides, None) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            return EXIT_CONFIG;
        }
    };
    let report = AuditLog::load(&args.logfile).and_then(|log| audit_uniformity(&log, &cfg.secagg.field));
    match report {
        Ok(report) => {
            for c in &report.clients {
                println!(
                    "client {:>4}  coords {:>8}  chi2 {:>10.2}  p {:.4e}",
                    c.client, c.coordinates, c.statistic, c.p_value
                );
            }
            if report.passed() {
                println!("PASS: all {} clients look uniform", report.clients.len());
                EXIT_OK
            } else {
                println!("FAIL: minimum p-value {:.3e}", report.min_p_value());
                EXIT_AUDIT_FAILED
            }
        }
        Err(e) => {
            eprintln!("error: {}: {e}", args.logfile.display());
            EXIT_CONFIG
        }
    }
}

pub fn cmd_summarize(logfile: &Path) -> u8 {
    match AuditLog::load(logfile) {
        Ok(log) => {
            print!("{}", log.summary());
            EXIT_OK
        }
        Err(e) => {
            eprintln!("error: {}: {e}", logfile.display());
            EXIT_CONFIG
        }
    }
}
