//! `relfp`: experiment runner for the relativistic Fokker-Planck toolkit.
//!
//! Every subcommand prints one JSON summary on stdout. Exit status is 0 on
//! success, 1 when a verified property fails and 2 on bad input.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use relfp_core::Error;
use serde_json::{json, Value};

#[derive(Parser, Debug)]
#[command(
    name = "relfp",
    version,
    about = "Relativistic kinetic Fokker-Planck solver and verification suite"
)]
struct Cli {
    /// Worker threads; RELFP_THREADS overrides this
    #[arg(long, global = true, value_name = "N")]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone)]
struct OutArg {
    /// Directory for CSV, checkpoint and JSON files
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Inhomogeneous run from a key=value config file
    Simulate {
        #[arg(long, value_name = "FILE")]
        config: Option<PathBuf>,
        /// Override a config key, e.g. --set solver.dt=0.001
        #[arg(long = "set", value_name = "KEY=VALUE")]
        set: Vec<String>,
        #[command(flatten)]
        out: OutArg,
    },
    /// Momentum-only relaxation against the discrete spectral gap
    Homogeneous {
        #[arg(long, default_value_t = 2.5)]
        c: f64,
        #[arg(long, default_value_t = 400)]
        np: usize,
        #[arg(long, default_value_t = 1.0)]
        p_shift: f64,
        #[command(flatten)]
        out: OutArg,
    },
    /// Spectral and hypocoercivity constants for each potential
    Constants {
        #[arg(long, value_delimiter = ',', default_value = "harmonic")]
        potential: Vec<String>,
        #[arg(long, default_value_t = 1.0)]
        c: f64,
        #[arg(long, default_value_t = 128)]
        nx: usize,
        #[arg(long, default_value_t = 256)]
        np: usize,
        #[command(flatten)]
        out: OutArg,
    },
    /// Matrix lemmas in dimensions --d, plus weight-matrix certificates
    VerifyMatrices {
        #[arg(long, value_delimiter = ',', default_value = "1,2,3,5")]
        d: Vec<usize>,
        #[arg(long, value_delimiter = ',')]
        potential: Vec<String>,
        #[arg(long, default_value_t = 10_000)]
        samples: usize,
        /// Samples for the theta/epsilon/gamma certificates
        #[arg(long, default_value_t = relfp_core::experiments::CERTIFY_SAMPLES)]
        cert_samples: usize,
        #[arg(long, default_value_t = 1.0)]
        t0: f64,
        #[arg(long, default_value_t = commands::DEFAULT_SEED)]
        seed: u64,
        #[command(flatten)]
        out: OutArg,
    },
    /// Elliptic regularity and weighted Poincare checks
    EllipticVerify {
        #[arg(long, value_delimiter = ',', default_value = "harmonic,double-well")]
        potential: Vec<String>,
        #[arg(long, default_value_t = 129)]
        nx: usize,
        #[arg(long, default_value_t = 16)]
        basis: usize,
        #[arg(long, default_value_t = 100)]
        samples: usize,
        #[arg(long, default_value_t = commands::DEFAULT_SEED)]
        seed: u64,
        #[command(flatten)]
        out: OutArg,
    },
    /// Closed-form kappa1(c) against the momentum eigensolver
    NewtonianLimit {
        /// lo:hi[:log|lin[:n]]
        #[arg(long, default_value = "2.1:1e4:log")]
        c_grid: String,
        #[arg(long, default_value_t = relfp_core::constants::EIGEN_NODES)]
        eigen_nodes: usize,
        /// Skip the eigensolver column
        #[arg(long)]
        no_eigen: bool,
        #[command(flatten)]
        out: OutArg,
    },
    /// Gradient power laws after a rough datum, with the certified bounds
    Hypoelliptic {
        #[arg(long, default_value_t = 1.0)]
        t0: f64,
        #[arg(long, default_value = "harmonic")]
        potential: String,
        #[arg(long, default_value_t = 128)]
        nx: usize,
        #[arg(long, default_value_t = 256)]
        np: usize,
        #[arg(long, default_value_t = 1e-3)]
        dt: f64,
        #[arg(long, default_value_t = commands::DEFAULT_SEED)]
        seed: u64,
        #[command(flatten)]
        out: OutArg,
    },
    /// Merge the JSON summaries in a directory into report.json
    Report {
        #[arg(long, value_name = "DIR")]
        out: PathBuf,
    },
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Simulate { .. } => "simulate",
            Command::Homogeneous { .. } => "homogeneous",
            Command::Constants { .. } => "constants",
            Command::VerifyMatrices { .. } => "verify-matrices",
            Command::EllipticVerify { .. } => "elliptic-verify",
            Command::NewtonianLimit { .. } => "newtonian-limit",
            Command::Hypoelliptic { .. } => "hypoelliptic",
            Command::Report { .. } => "report",
        }
    }

    fn out_dir(&self) -> Option<PathBuf> {
        match self {
            Command::Simulate { out, .. }
            | Command::Homogeneous { out, .. }
            | Command::Constants { out, .. }
            | Command::VerifyMatrices { out, .. }
            | Command::EllipticVerify { out, .. }
            | Command::NewtonianLimit { out, .. }
            | Command::Hypoelliptic { out, .. } => out.out.clone(),
            Command::Report { .. } => None,
        }
    }
}

fn configure_threads(flag: Option<usize>) -> relfp_core::Result<()> {
    let n = match std::env::var("RELFP_THREADS") {
        Ok(s) if !s.trim().is_empty() => Some(
            s.trim()
                .parse::<usize>()
                .ok()
                .filter(|&n| n > 0)
                .ok_or_else(|| {
                    Error::Config(format!("RELFP_THREADS = {s:?} is not a positive integer"))
                })?,
        ),
        _ => flag,
    };
    if let Some(n) = n {
        if n == 0 {
            return Err(Error::Config("--threads must be positive".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    }
    Ok(())
}

fn exit_code_for(e: &Error) -> u8 {
    // a time step above the stability bound is a configuration mistake
    if e.is_config() || matches!(e, Error::Stability { .. }) {
        2
    } else {
        1
    }
}

fn emit(summary: &Value) {
    use std::io::Write;
    let text = serde_json::to_string_pretty(summary).expect("serialisable summary");
    // a closed pipe on stdout is not worth a panic
    let _ = writeln!(std::io::stdout().lock(), "{text}");
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind::*;
            if matches!(
                e.kind(),
                DisplayHelp | DisplayVersion | DisplayHelpOnMissingArgumentOrSubcommand
            ) {
                let _ = e.print();
                return ExitCode::from(if e.kind() == DisplayHelpOnMissingArgumentOrSubcommand {
                    2
                } else {
                    0
                });
            }
            eprint!("{}", e.render());
            emit(&json!({"status": "usage-error", "exit_code": 2, "error": e.kind().to_string()}));
            return ExitCode::from(2);
        }
    };
    let name = cli.command.name();
    let out_dir = cli.command.out_dir();
    let result = configure_threads(cli.threads).and_then(|_| commands::run(cli.command));
    let (mut summary, mut code, mut json_path) = match result {
        Ok(o) => (o.summary, if o.passed { 0 } else { 1 }, o.json_path),
        Err(e) => (json!({"error": e.to_string()}), exit_code_for(&e), None),
    };
    if json_path.is_none() {
        json_path = out_dir.map(|d| d.join(format!("{}.json", name.replace('-', "_"))));
    }
    if let Some(path) = &json_path {
        // the summary file is part of the contract, so failing to place it is an input error
        if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
            if let Err(e) = std::fs::create_dir_all(parent) {
                eprintln!("relfp: cannot create {}: {e}", parent.display());
                code = 2;
            }
        }
    }
    let status = match code {
        0 => "ok",
        1 => "verification-failed",
        _ => "config-error",
    };
    if let Value::Object(m) = &mut summary {
        m.insert("command".into(), json!(name));
        m.insert("status".into(), json!(status));
        m.insert("exit_code".into(), json!(code));
    }
    if let Some(path) = &json_path {
        if let Err(e) = relfp_core::report::write_json(path, &summary) {
            eprintln!("relfp: cannot write {}: {e}", path.display());
            code = 2;
        }
    }
    emit(&summary);
    ExitCode::from(code)
}
