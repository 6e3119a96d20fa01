//! Experiment harness: episode runs, guidance generation and refinement,
//! validation, heatmaps, reports and replay.
//!
//! Exit codes: 0 ok, 1 validation failure, 2 configuration error,
//! 3 backend or protocol error.

use std::ffi::OsString;
use std::io::Write;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use guidance_core::agents::BackendKind;
use guidance_core::policy::{DynamicsMode, PolicySpec};

pub mod commands;
pub mod config;
pub mod error;
pub mod http;
pub mod io;
pub mod metrics;
pub mod runner;

pub use config::RunConfig;
pub use error::CliError;

use config::{GuidanceSource, SeedSpec};

#[derive(Debug, Parser)]
#[command(name = "guidance", version, about = "Guided policy experiments")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run episodes over a seed range and write logs and metrics.
    Run(RunArgs),
    /// Generate guidance with the agents, evaluate it and refine it from failures.
    Improve(ImproveArgs),
    /// Check a guidance file and print the report.
    Validate(ValidateArgs),
    /// Blend base and guidance scores over a grid and write CSV.
    Heatmap(HeatmapArgs),
    /// Aggregate run directories into a success-rate table.
    Report(ReportArgs),
    /// Re-execute logged episodes and compare outcomes.
    Replay(ReplayArgs),
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum PolicyKind {
    Random,
    Gaussian,
    Waypoint,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum DynamicsArg {
    Identity,
    Clamped,
}

/// Flags shared by `run` and `improve`; each overrides the config file.
#[derive(Debug, Clone, Args)]
pub struct ExperimentArgs {
    /// TOML experiment file.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub task: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub policy: Option<PolicyKind>,
    #[arg(long)]
    pub alpha: Option<f64>,
    /// Candidate actions sampled per step.
    #[arg(long)]
    pub n: Option<usize>,
    /// `a..b` (inclusive), `a,b,c` or a single seed.
    #[arg(long)]
    pub seeds: Option<String>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub dynamics: Option<DynamicsArg>,
    /// Scripted backend transcript; implies agent-generated guidance.
    #[arg(long)]
    pub transcript: Option<PathBuf>,
    #[arg(long)]
    pub record_candidates: bool,
    /// Keep per-candidate score vectors in the logs.
    #[arg(long)]
    pub record_scores: bool,
}

#[derive(Debug, Clone, Args)]
pub struct RunArgs {
    #[command(flatten)]
    pub exp: ExperimentArgs,
    /// Guidance file; omit for the base policy alone.
    #[arg(long)]
    pub guidance: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct ImproveArgs {
    #[command(flatten)]
    pub exp: ExperimentArgs,
    #[arg(long)]
    pub iterations: Option<usize>,
}

#[derive(Debug, Clone, Args)]
pub struct ValidateArgs {
    pub path: PathBuf,
    /// Task fixture supplying probe states and known objects.
    #[arg(long)]
    pub task: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct HeatmapArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub task: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub policy: Option<PolicyKind>,
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long)]
    pub guidance: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 20)]
    pub nx: usize,
    #[arg(long, default_value_t = 20)]
    pub ny: usize,
    #[arg(long)]
    pub z: Option<f64>,
    /// Write the grid here instead of stdout.
    #[arg(long)]
    pub csv: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct ReportArgs {
    #[arg(required = true)]
    pub dirs: Vec<PathBuf>,
    #[arg(long)]
    pub csv: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct ReplayArgs {
    #[arg(long)]
    pub task: PathBuf,
    pub log: PathBuf,
}

fn policy_for(kind: PolicyKind, current: &PolicySpec) -> PolicySpec {
    match (kind, current) {
        (PolicyKind::Random, _) => PolicySpec::Random,
        (PolicyKind::Gaussian, p @ PolicySpec::Gaussian { .. }) => p.clone(),
        (PolicyKind::Waypoint, p @ PolicySpec::Waypoint { .. }) => p.clone(),
        (PolicyKind::Gaussian, _) => {
            PolicySpec::Gaussian { sigmas: Default::default(), predictor: Default::default() }
        }
        (PolicyKind::Waypoint, _) => {
            PolicySpec::Waypoint { proposals: 16, spread: 0.05, predictor: Default::default() }
        }
    }
}

fn base_config(path: Option<&PathBuf>) -> Result<RunConfig, CliError> {
    match path {
        Some(p) => RunConfig::load(p),
        None => Ok(RunConfig::default()),
    }
}

/// Config file first, then flags on top.
pub fn experiment_config(a: &ExperimentArgs) -> Result<RunConfig, CliError> {
    let mut cfg = base_config(a.config.as_ref())?;
    if let Some(t) = &a.task {
        cfg.task = Some(t.clone());
    }
    if let Some(k) = a.policy {
        cfg.policy = policy_for(k, &cfg.policy);
    }
    if let Some(x) = a.alpha {
        cfg.alpha = x;
    }
    if let Some(n) = a.n {
        cfg.n = n;
    }
    if let Some(s) = &a.seeds {
        cfg.seeds = SeedSpec::Text(s.clone());
    }
    if let Some(o) = &a.out {
        cfg.out = o.clone();
    }
    if let Some(d) = a.dynamics {
        cfg.dynamics = match d {
            DynamicsArg::Identity => DynamicsMode::Identity,
            DynamicsArg::Clamped => DynamicsMode::Clamped,
        };
    }
    if let Some(t) = &a.transcript {
        cfg.backend.kind = BackendKind::Scripted;
        cfg.backend.transcript = Some(t.to_string_lossy().into_owned());
        cfg.guidance.source = Some(GuidanceSource::Agents);
    }
    cfg.record_candidates |= a.record_candidates;
    cfg.record_scores |= a.record_scores;
    Ok(cfg)
}

/// Parses `args` (program name first) and runs the command.
pub fn execute<I, T>(args: I, out: &mut dyn Write) -> Result<(), CliError>
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) if !e.use_stderr() => {
            let _ = write!(out, "{e}");
            return Ok(());
        }
        Err(e) => return Err(CliError::config(e.to_string().trim_end().to_string())),
    };
    match cli.command {
        Command::Run(a) => {
            let mut cfg = experiment_config(&a.exp)?;
            if let Some(g) = a.guidance {
                cfg.guidance.path = Some(g);
                cfg.guidance.source = Some(GuidanceSource::File);
            }
            commands::cmd_run(&cfg, out)
        }
        Command::Improve(a) => {
            let mut cfg = experiment_config(&a.exp)?;
            if let Some(k) = a.iterations {
                cfg.iterations = k;
            }
            cfg.guidance.source = Some(GuidanceSource::Agents);
            commands::cmd_improve(&cfg, out)
        }
        Command::Validate(a) => commands::cmd_validate(&a.path, a.task.as_deref(), out),
        Command::Heatmap(a) => {
            let mut cfg = base_config(a.config.as_ref())?;
            if let Some(t) = a.task {
                cfg.task = Some(t);
            }
            if let Some(k) = a.policy {
                cfg.policy = policy_for(k, &cfg.policy);
            }
            if let Some(x) = a.alpha {
                cfg.alpha = x;
            }
            // The grid replaces the sampled candidates; `n` plays no part.
            cfg.guidance.source = Some(GuidanceSource::None);
            let req = commands::HeatmapRequest {
                seed: a.seed,
                guidance: a.guidance.or(cfg.guidance.path.clone()),
                nx: a.nx,
                ny: a.ny,
                z: a.z,
                csv: a.csv,
            };
            commands::cmd_heatmap(&cfg, &req, out)
        }
        Command::Report(a) => commands::cmd_report(&a.dirs, a.csv.as_deref(), out),
        Command::Replay(a) => commands::cmd_replay(&a.task, &a.log, out),
    }
}
