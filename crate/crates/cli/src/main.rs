//! `bdmix` — mixing-time certificates and spectral oracles for birth–death
//! queues from the command line.
//!
//! Exit codes: 0 success, 2 flag or precondition error, 3 a reported bound
//! failed against its oracle, 4 numerical non-convergence.

mod commands;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde_json::json;

use commands::{BoundsArgs, CertChoice, CliError, DriftFamily, ModelSpec};
use output::{Format, Meta};

#[derive(Parser, Debug)]
#[command(
    name = "bdmix",
    version,
    about = "Mixing-time bounds and spectral oracles for M/M/n queues"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone)]
struct ModelArgs {
    /// Number of servers, or `inf` for M/M/∞.
    #[arg(long)]
    n: String,
    /// Heavy-traffic exponent: λ = n − n^{1−α} (in units of μ).
    #[arg(long, conflicts_with = "lambda")]
    alpha: Option<f64>,
    /// Arrival rate.
    #[arg(long)]
    lambda: Option<f64>,
    /// Per-server service rate.
    #[arg(long, default_value_t = 1.0)]
    mu: f64,
    /// Truncation level (default: smallest window with tail mass below --mass-tol).
    #[arg(long)]
    qmax: Option<usize>,
    #[arg(long, default_value_t = 1e-12)]
    mass_tol: f64,
}

impl ModelArgs {
    fn spec(&self) -> ModelSpec {
        ModelSpec {
            n: self.n.clone(),
            alpha: self.alpha,
            lambda: self.lambda,
            mu: self.mu,
            q_max: self.qmax,
            mass_tol: self.mass_tol,
        }
    }
}

#[derive(Args, Debug, Clone)]
struct OutputArgs {
    #[arg(long, value_enum, default_value_t = Format::Csv)]
    format: Format,
    /// Write to a file instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Stationary distribution on the truncation window.
    Stationary {
        #[command(flatten)]
        model: ModelArgs,
        #[command(flatten)]
        output: OutputArgs,
    },
    /// χ, χ² and TV decay from an initial law, with the certified χ envelope.
    Transient {
        #[command(flatten)]
        model: ModelArgs,
        #[command(flatten)]
        output: OutputArgs,
        /// Time grid `lo:hi:step` (inclusive).
        #[arg(long, default_value = "0:10:1")]
        t_grid: String,
        /// `dirac:<q>` or `uniform:<lo>,<hi>`.
        #[arg(long, default_value = "dirac:0")]
        init: String,
        #[arg(long, default_value_t = 1e-12)]
        tol: f64,
    },
    /// Spectral gap with closed-form lower bounds and the certified rate.
    Gap {
        #[command(flatten)]
        model: ModelArgs,
        #[command(flatten)]
        output: OutputArgs,
    },
    /// Build a Lyapunov drift certificate and check it pointwise.
    Drift {
        #[command(flatten)]
        model: ModelArgs,
        #[command(flatten)]
        output: OutputArgs,
        #[arg(long, value_enum, default_value_t = DriftFamily::Auto)]
        family: DriftFamily,
        /// Geometric ratio for the mean-field family.
        #[arg(long)]
        z: Option<f64>,
    },
    /// Build a Poincaré certificate and verify it on seeded probe functions.
    Certify {
        #[command(flatten)]
        model: ModelArgs,
        #[command(flatten)]
        output: OutputArgs,
        #[arg(long, value_enum, default_value_t = CertChoice::Auto)]
        method: CertChoice,
        /// Number of probe functions.
        #[arg(long, default_value_t = 200)]
        tests: usize,
    },
    /// Finite-time statistics bounds against the transient solution.
    Bounds {
        #[command(flatten)]
        model: ModelArgs,
        #[command(flatten)]
        output: OutputArgs,
        #[arg(long, default_value = "1:10:1")]
        t_grid: String,
        #[arg(long, default_value = "dirac:0")]
        init: String,
        /// Tail levels x for P[ε(q − n) > x].
        #[arg(long, value_delimiter = ',', default_value = "1,2,4")]
        xs: Vec<f64>,
        #[arg(long, default_value_t = 1.0)]
        delta: f64,
        /// Constant of the sub-Halfin–Whitt idle-server lower bound.
        #[arg(long, default_value_t = 1.0)]
        kappa: f64,
        #[arg(long, default_value_t = 1e-12)]
        tol: f64,
    },
    /// Certified rate vs spectral gap over an (n, α) grid.
    Sweep {
        #[command(flatten)]
        output: OutputArgs,
        #[arg(long, value_delimiter = ',', default_value = "110,500,2000")]
        ns: Vec<usize>,
        #[arg(long, value_delimiter = ',', default_value = "0.25,0.5,0.75,1")]
        alphas: Vec<f64>,
        /// Add the Lyapunov-family and finite-set-method columns.
        #[arg(long)]
        table1: bool,
        /// Use the light-traffic rate instead of the regime dispatch.
        #[arg(long)]
        mean_field: bool,
        /// Worker threads (rows are emitted in grid order regardless).
        #[arg(long, default_value_t = 1)]
        jobs: usize,
    },
}

fn run(cmd: &Command) -> Result<(output::Table, bool, &OutputArgs), CliError> {
    let (res, out) = match cmd {
        Command::Stationary { model, output } => (commands::cmd_stationary(&model.spec()), output),
        Command::Transient {
            model,
            output,
            t_grid,
            init,
            tol,
        } => (
            commands::cmd_transient(&model.spec(), t_grid, init, *tol),
            output,
        ),
        Command::Gap { model, output } => (commands::cmd_gap(&model.spec()), output),
        Command::Drift {
            model,
            output,
            family,
            z,
        } => (commands::cmd_drift(&model.spec(), *family, *z), output),
        Command::Certify {
            model,
            output,
            method,
            tests,
        } => (
            commands::cmd_certify(&model.spec(), *method, *tests, output.seed),
            output,
        ),
        Command::Bounds {
            model,
            output,
            t_grid,
            init,
            xs,
            delta,
            kappa,
            tol,
        } => {
            let args = BoundsArgs {
                grid: t_grid,
                init,
                xs,
                delta: *delta,
                kappa: *kappa,
                tol: *tol,
            };
            (commands::cmd_bounds(&model.spec(), &args), output)
        }
        Command::Sweep {
            output,
            ns,
            alphas,
            table1,
            mean_field,
            jobs,
        } => (
            commands::cmd_sweep(ns, alphas, *table1, *mean_field, *jobs),
            output,
        ),
    };
    let (table, valid) = res?;
    Ok((table, valid, out))
}

fn error_exit(kind: &str, message: &str, code: u8) -> ExitCode {
    let record = json!({ "error": kind, "message": message, "exit_code": code });
    eprintln!("{record}");
    ExitCode::from(code)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                let _ = e.print();
                return ExitCode::SUCCESS;
            }
            let _ = e.print();
            return error_exit("flag", &e.kind().to_string(), 2);
        }
    };
    let flags: Vec<String> = std::env::args().skip(1).collect();
    match run(&cli.command) {
        Ok((table, valid, out)) => {
            let meta = Meta {
                seed: out.seed,
                flags,
            };
            let bytes = match output::render(&table, out.format, &meta) {
                Ok(b) => b,
                Err(e) => return error_exit("io", &e.to_string(), 2),
            };
            if let Err(e) = output::emit(&bytes, out.out.as_deref()) {
                return error_exit("io", &e.to_string(), 2);
            }
            if valid {
                ExitCode::SUCCESS
            } else {
                error_exit("validity", "a reported bound exceeded its oracle", 3)
            }
        }
        Err(CliError::Usage(msg)) => error_exit("flag", &msg, 2),
        Err(CliError::Core(e)) => error_exit(error_kind(&e), &e.to_string(), exit_code(&e)),
    }
}

fn exit_code(e: &bdmix::Error) -> u8 {
    match e {
        bdmix::Error::NonConvergence(_) | bdmix::Error::Divergent(_) => 4,
        _ => 2,
    }
}

fn error_kind(e: &bdmix::Error) -> &'static str {
    use bdmix::Error::*;
    match e {
        InvalidParameter(_) => "invalid_parameter",
        Unstable { .. } => "unstable",
        Truncation(_) => "truncation",
        NotAbsolutelyContinuous { .. } => "not_absolutely_continuous",
        CostGuard(_) => "cost_guard",
        NonConvergence(_) => "non_convergence",
        OutOfRange(_) => "out_of_range",
        Divergent(_) => "divergent",
        NoNegativeDrift { .. } => "no_negative_drift",
        BrokenChain(_) => "broken_chain",
    }
}
