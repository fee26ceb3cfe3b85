//! `rydpump`: quasienergy spectra, Liouvillian analysis and pumping protocols from a TOML config.

// `!(x > 0.0)` style checks are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

mod commands;
mod config;
mod error;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use rydpump::protocol::Engine;

use config::{DissipationKind, ExperimentConfig};
pub use error::CliError;

/// Worker-count override for the internal thread pool.
const THREADS_ENV: &str = "RYDPUMP_THREADS";

#[derive(Parser, Debug)]
#[command(name = "rydpump", version, about = "Floquet-kicked Rydberg stabilizer pumping")]
struct Cli {
    /// TOML experiment config; defaults apply when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Noise samples for `protocol noise`.
    #[arg(long, global = true)]
    samples: Option<usize>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[arg(long, global = true, value_enum)]
    engine: Option<EngineArg>,
    #[arg(long, global = true, value_enum)]
    dissipation: Option<DissipationArg>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum EngineArg {
    Exact,
    Effective,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum DissipationArg {
    Reset,
    Lindblad,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Quasienergies and avoided crossings over a Δ/Ω grid.
    Spectrum,
    /// Three-level Liouvillian spectra and convergence traces over Ωp/γp.
    Liouvillian,
    /// Pumping protocols.
    Protocol {
        #[command(subcommand)]
        run: ProtocolCommand,
    },
}

#[derive(Subcommand, Debug, Clone, Copy)]
enum ProtocolCommand {
    Bell,
    Cluster,
    Graph,
    Purify,
    Scaling,
    KernelCheck,
    Noise,
}

fn apply_overrides(cli: &Cli, cfg: &mut ExperimentConfig) {
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    if let Some(n) = cli.samples {
        cfg.noise.samples = n;
    }
    if let Some(dir) = &cli.out {
        cfg.output.dir = dir.display().to_string();
    }
    if let Some(e) = cli.engine {
        cfg.protocol.engine = Some(match e {
            EngineArg::Exact => Engine::Exact,
            EngineArg::Effective => Engine::Effective,
        });
    }
    if let Some(d) = cli.dissipation {
        cfg.protocol.dissipation = match d {
            DissipationArg::Reset => DissipationKind::Reset,
            DissipationArg::Lindblad => DissipationKind::Lindblad,
        };
    }
}

fn init_threads() -> Result<(), CliError> {
    let Ok(v) = std::env::var(THREADS_ENV) else {
        return Ok(());
    };
    let n: usize = v
        .parse()
        .map_err(|_| CliError::Validation(format!("{THREADS_ENV}={v:?} is not a worker count")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| CliError::Validation(e.to_string()))
}

fn run(cli: &Cli) -> Result<commands::Status, CliError> {
    init_threads()?;
    let mut cfg = match &cli.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default(),
    };
    apply_overrides(cli, &mut cfg);
    match cli.command {
        Command::Spectrum => commands::spectrum(&cfg),
        Command::Liouvillian => commands::liouvillian(&cfg),
        Command::Protocol { run } => match run {
            ProtocolCommand::Bell => commands::bell(&cfg),
            ProtocolCommand::Cluster => commands::cluster(&cfg),
            ProtocolCommand::Graph => commands::graph(&cfg),
            ProtocolCommand::Purify => commands::purify(&cfg),
            ProtocolCommand::Scaling => commands::scaling(&cfg),
            ProtocolCommand::KernelCheck => commands::kernel_check(&cfg),
            ProtocolCommand::Noise => commands::noise(&cfg),
        },
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(commands::Status::Done) => ExitCode::SUCCESS,
        Ok(commands::Status::Censored(why)) => {
            eprintln!("rydpump: censored: {why}");
            ExitCode::from(4)
        }
        Err(e) => {
            eprintln!("rydpump: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
