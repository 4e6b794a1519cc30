use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use regloss::commands::{
    cmd_plan, cmd_select_shear, cmd_simulate, cmd_track_dump, cmd_verify, load_config, Context,
};
use regloss::config::ExperimentConfig;
use regloss::CliResult;

#[derive(Parser)]
#[command(
    name = "regloss",
    version,
    about = "Instantaneous loss of H1 regularity for transport by Sobolev velocity fields"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Experiment configuration (JSON).
    #[arg(long)]
    config: PathBuf,
    /// Output directory; overrides the config.
    #[arg(long)]
    out: Option<PathBuf>,
    /// RNG seed; overrides the config.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct TrackCommon {
    /// Experiment configuration (JSON); the standard track when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Subcommand)]
enum Command {
    /// Rank the 4d candidate shears on the configured datum.
    SelectShear(Common),
    /// Find the density point and lay out the slot cubes.
    Plan(Common),
    /// Growth curve, series and velocity norms for the plan.
    Simulate(Common),
    /// Run the invariant battery; exit 4 on any failure.
    Verify(Common),
    /// Track utilities.
    Track {
        #[command(subcommand)]
        action: TrackAction,
    },
}

#[derive(Subcommand)]
enum TrackAction {
    /// Write the piece descriptors and outlines as JSON and SVG.
    DumpGeometry(TrackCommon),
}

fn context(c: &Common) -> CliResult<Context> {
    Ok(Context::new(load_config(
        &c.config,
        c.out.as_deref(),
        c.seed,
    )?))
}

fn run(cli: Cli) -> CliResult<()> {
    match cli.command {
        Command::SelectShear(c) => cmd_select_shear(&context(&c)?),
        Command::Plan(c) => cmd_plan(&context(&c)?).map(|_| ()),
        Command::Simulate(c) => cmd_simulate(&context(&c)?).map(|_| ()),
        Command::Verify(c) => cmd_verify(&context(&c)?).map(|_| ()),
        Command::Track {
            action: TrackAction::DumpGeometry(c),
        } => {
            let cfg = match &c.config {
                Some(p) => load_config(p, c.out.as_deref(), c.seed)?,
                None => {
                    let mut cfg = ExperimentConfig::default();
                    if let Some(o) = &c.out {
                        cfg.out = o.to_string_lossy().into_owned();
                    }
                    cfg
                }
            };
            cmd_track_dump(&Context::new(cfg))
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
