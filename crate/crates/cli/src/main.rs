//! `debye-limit`: run Euler-Poisson and quasineutral-limit simulations,
//! eps-sweeps and diagnostic checks.
//!
//! Exit codes: 0 success, 1 runtime failure, 2 usage or configuration error,
//! 3 blow-up guard fired, 4 a verdict or tolerance failed.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use commands::{Failure, Status};
use config::{Config, FlowKind, Overrides, OUT_ENV};

#[derive(Parser)]
#[command(
    name = "debye-limit",
    version,
    about = "Euler-Poisson vs quasineutral-limit simulator and convergence harness",
    after_help = "Precedence: flags, then the config file, then built-in defaults. The output directory falls back to $DEBYE_LIMIT_OUT, then ./debye-limit-out."
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
    #[command(flatten)]
    flags: Flags,
}

#[derive(Subcommand)]
enum Command {
    /// Run one trajectory and write its norm time series
    Simulate,
    /// Run an eps-sweep and write the report (JSON and CSV)
    Sweep,
    /// Energy identity, remainder residuals and commutator sampling
    Check,
    /// Print the version
    Version,
}

#[derive(Args)]
struct Flags {
    /// TOML config file with [grid], [init], [run], [pb], [sweep], [check] and [output] sections [default: none]
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Debye parameter for simulate and check [default: 1e-2]
    #[arg(long, global = true, value_name = "X", allow_negative_numbers = true)]
    eps: Option<f64>,
    /// Flow to integrate in simulate [default: ep]
    #[arg(long, global = true, value_enum)]
    flow: Option<FlowKind>,
    /// Grid points, a power of two >= 32 [default: 256]
    #[arg(long, global = true, value_name = "N")]
    grid: Option<usize>,
    /// Final time [default: 0.5]
    #[arg(long = "t-end", global = true, value_name = "T", allow_negative_numbers = true)]
    t_end: Option<f64>,
    /// Time step [default: 0.25 dx / (max|u0| + 1.5)]
    #[arg(long, global = true, value_name = "DT", allow_negative_numbers = true)]
    dt: Option<f64>,
    /// Highest Sobolev order reported; sweeps monitor 0..=S [default: 2]
    #[arg(long, global = true, value_name = "S")]
    s: Option<usize>,
    /// Output directory [default: $DEBYE_LIMIT_OUT or ./debye-limit-out]
    #[arg(long, global = true, value_name = "DIR")]
    out: Option<PathBuf>,
    /// Worker threads for sweeps, 0 = all cores [default: 0]
    #[arg(long, global = true, value_name = "N")]
    jobs: Option<usize>,
    /// Seed for randomized checks [default: 0]
    #[arg(long, global = true, value_name = "K")]
    seed: Option<u64>,
    /// Density perturbation amplitude [default: 0.1]
    #[arg(long = "n-amp", global = true, value_name = "A", allow_negative_numbers = true)]
    n_amp: Option<f64>,
    /// Velocity amplitude [default: 0.1]
    #[arg(long = "u-amp", global = true, value_name = "A", allow_negative_numbers = true)]
    u_amp: Option<f64>,
    /// Sweep list, comma separated and non-increasing [default: 1e-1,1e-2,1e-3,1e-4]
    #[arg(long = "eps-list", global = true, value_name = "LIST", value_delimiter = ',', allow_negative_numbers = true)]
    eps_list: Option<Vec<f64>>,
    /// Remainder-norm growth allowed across a sweep [default: 2.0]
    #[arg(long = "bound-factor", global = true, value_name = "F", allow_negative_numbers = true)]
    bound_factor: Option<f64>,
    /// Tolerance on the energy-identity defect in check [default: 1e-5]
    #[arg(long = "identity-tol", global = true, value_name = "TOL", allow_negative_numbers = true)]
    identity_tol: Option<f64>,
}

impl Flags {
    fn overrides(&self) -> Overrides {
        Overrides {
            eps: self.eps,
            flow: self.flow,
            grid: self.grid,
            t_end: self.t_end,
            dt: self.dt,
            s: self.s,
            out: self.out.clone(),
            jobs: self.jobs,
            seed: self.seed,
            n_amp: self.n_amp,
            u_amp: self.u_amp,
            bound_factor: self.bound_factor,
            eps_list: self.eps_list.clone(),
            identity_tol: self.identity_tol,
        }
    }
}

fn execute(cli: &Cli) -> Result<Status, Failure> {
    if let Command::Version = cli.command {
        println!("debye-limit {}", env!("CARGO_PKG_VERSION"));
        return Ok(Status::Ok);
    }
    let mut cfg = match &cli.flags.config {
        Some(path) => Config::load(path).map_err(Failure::Usage)?,
        None => Config::default(),
    };
    cfg.apply(&cli.flags.overrides());
    let out = cfg.out_dir(std::env::var(OUT_ENV).ok());
    match cli.command {
        Command::Simulate => commands::simulate(&cfg, &out),
        Command::Sweep => commands::sweep(&cfg, &out),
        Command::Check => commands::check(&cfg, &out),
        Command::Version => unreachable!(),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = e.exit_code();
            let _ = e.print();
            return ExitCode::from(code as u8);
        }
    };
    match execute(&cli) {
        Ok(status) => ExitCode::from(status.exit_code()),
        Err(f) => {
            eprintln!("{f}");
            ExitCode::from(f.exit_code())
        }
    }
}
