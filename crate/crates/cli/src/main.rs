//! `qrm`: steady states, spectra, phase-space maps, trajectories and gap scaling
//! for the dissipative quantum Rabi model.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Subcommand)]
pub enum Command {
    /// Steady state of the master equation.
    Steady,
    /// Liouvillian gap and metastable-manifold dimension.
    Gap,
    /// Slowest Liouvillian eigenvalues.
    Spectrum,
    /// Husimi Q function of the steady-state mode.
    Qfunc,
    /// Mean-field fixed points, stability and quench settlements.
    Meanfield,
    /// Truncated cumulant equations and their steady state.
    Cumulant,
    /// Principal-component decomposition of the steady state.
    Pca,
    /// Quantum-jump trajectories.
    Trajectory,
    /// Gap against ω₀/Ω for each configured γ.
    Scan,
    /// Quadratic extrapolation of a scan.
    Fit,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::Steady => "steady",
            Command::Gap => "gap",
            Command::Spectrum => "spectrum",
            Command::Qfunc => "qfunc",
            Command::Meanfield => "meanfield",
            Command::Cumulant => "cumulant",
            Command::Pca => "pca",
            Command::Trajectory => "trajectory",
            Command::Scan => "scan",
            Command::Fit => "fit",
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "qrm", version, about = "Dissipative quantum Rabi model toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// TOML configuration file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    output_dir: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true)]
    cache_dir: Option<PathBuf>,
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[arg(long, global = true, allow_negative_numbers = true)]
    omega0: Option<f64>,
    #[arg(long = "Omega", global = true, allow_negative_numbers = true)]
    omega: Option<f64>,
    #[arg(long, global = true, allow_negative_numbers = true)]
    lambda_ratio: Option<f64>,
    #[arg(long, global = true, allow_negative_numbers = true)]
    kappa: Option<f64>,
    #[arg(long, global = true, allow_negative_numbers = true)]
    gamma: Option<f64>,
    /// Integer or `auto`.
    #[arg(long, global = true)]
    fock_cutoff: Option<String>,
    /// Any configuration key, e.g. `--set qfunc.points=101`. Repeatable.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    set: Vec<String>,
}

impl Cli {
    /// Flag values as overrides; `--set` entries come last and win.
    fn overrides(&self) -> Vec<String> {
        let mut o = Vec::new();
        let mut push = |k: &str, v: Option<String>| {
            if let Some(v) = v {
                o.push(format!("{k}={v}"));
            }
        };
        let quoted = |p: &Option<PathBuf>| p.as_ref().map(|p| toml::Value::String(p.display().to_string()).to_string());
        push("output_dir", quoted(&self.output_dir));
        push("cache_dir", quoted(&self.cache_dir));
        push("seed", self.seed.map(|v| v.to_string()));
        push("threads", self.threads.map(|v| v.to_string()));
        push("params.omega0", self.omega0.map(float));
        push("params.Omega", self.omega.map(float));
        push("params.lambda_ratio", self.lambda_ratio.map(float));
        push("params.kappa", self.kappa.map(float));
        push("params.gamma", self.gamma.map(float));
        push(
            "params.fock_cutoff",
            self.fock_cutoff
                .as_ref()
                .map(|s| if s.parse::<usize>().is_ok() { s.clone() } else { format!("{s:?}") }),
        );
        o.extend(self.set.iter().cloned());
        o
    }
}

/// TOML float literal, so that `--kappa 1` is not read as an integer.
fn float(v: f64) -> String {
    toml::Value::Float(v).to_string()
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let cfg = match config::load(cli.config.as_deref(), &cli.overrides()) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    };
    match commands::dispatch(cli.command, &cfg) {
        Ok(manifest) => {
            println!("{}", manifest.display());
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(commands::exit_code(&e))
        }
    }
}
