//! `tagflow` command-line front end.
//!
//! Every subcommand reads one key=value config file. Stages communicate
//! through the output directory, so `phantom`, `harp`, `register` and
//! `evaluate` can be run one at a time or all at once with `pipeline`.
//!
//! Exit codes: 0 success, 1 config/usage error, 2 numerical failure,
//! 3 I/O or file-format error. Logging verbosity comes from `TAGFLOW_LOG`
//! (`error`, `info` or `debug`; default `error`).

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use tagflow::config::PipelineConfig;
use tagflow::pipeline::{self, RunOptions};
use tagflow::{Error, Result};

#[derive(Parser, Debug)]
#[command(name = "tagflow", version, about = "Incompressible motion estimation from tagged volume sequences")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Render the synthetic shear phantom sequence.
    Phantom(Common),
    /// Extract harmonic phase volumes from the rendered frames.
    Harp(Common),
    /// Run the configured registration strategies.
    Register(Common),
    /// Score stored estimates and write metrics, images and the chart.
    Evaluate(Common),
    /// phantom, harp, register and evaluate in one go.
    Pipeline(Common),
}

#[derive(Args, Debug)]
struct Common {
    /// Config file (key=value lines).
    #[arg(long, value_name = "PATH")]
    config: PathBuf,
    /// Output directory; overrides `output.dir`.
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,
    /// Worker threads (default: all cores).
    #[arg(long, value_name = "N")]
    jobs: Option<usize>,
    /// Phantom noise seed; overrides `phantom.seed`.
    #[arg(long, value_name = "U64")]
    seed: Option<u64>,
    /// Write per-iteration convergence traces next to each estimate.
    #[arg(long)]
    trace: bool,
}

fn init_logging() -> std::result::Result<(), String> {
    let level = match std::env::var("TAGFLOW_LOG") {
        Ok(v) => match v.trim().to_ascii_lowercase().as_str() {
            "error" => log::LevelFilter::Error,
            "info" => log::LevelFilter::Info,
            "debug" => log::LevelFilter::Debug,
            other => return Err(format!("TAGFLOW_LOG must be error, info or debug, got {other:?}")),
        },
        Err(_) => log::LevelFilter::Error,
    };
    env_logger::Builder::new()
        .filter_level(level)
        .format_timestamp_millis()
        .init();
    Ok(())
}

fn run(command: Command) -> Result<()> {
    let (common, kind) = match command {
        Command::Phantom(c) => (c, "phantom"),
        Command::Harp(c) => (c, "harp"),
        Command::Register(c) => (c, "register"),
        Command::Evaluate(c) => (c, "evaluate"),
        Command::Pipeline(c) => (c, "pipeline"),
    };
    if let Some(jobs) = common.jobs {
        if jobs == 0 {
            return Err(Error::Config("--jobs must be at least 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build_global()
            .map_err(|e| Error::Config(format!("cannot size the thread pool: {e}")))?;
    }
    let mut cfg = PipelineConfig::load(&common.config)?;
    if let Some(seed) = common.seed {
        cfg.phantom.seed = seed;
    }
    cfg.validate()?;
    let out = common.out.unwrap_or_else(|| cfg.output.dir.clone());
    let opts = RunOptions { trace: common.trace };
    log::info!("{kind}: output directory {}", out.display());
    match kind {
        "phantom" => pipeline::cmd_phantom(&cfg, &out).map(drop),
        "harp" => pipeline::cmd_harp(&cfg, &out).map(drop),
        "register" => pipeline::cmd_register(&cfg, &out, &opts).map(drop),
        "evaluate" => pipeline::cmd_evaluate(&cfg, &out).map(drop),
        _ => pipeline::cmd_pipeline(&cfg, &out, &opts).map(drop),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    if let Err(msg) = init_logging() {
        eprintln!("error: {msg}");
        return ExitCode::from(1);
    }
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
