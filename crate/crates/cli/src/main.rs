mod eval;
mod exit;
mod generate;
mod synth;
mod train;

use std::path::Path;
use std::process::ExitCode;

use anyhow::Context;
use clap::{Parser, Subcommand};

use exit::Exit;

/// Environment-aware quadruped motion: synthesize data, train, evaluate, generate.
#[derive(Parser)]
#[command(name = "vpet", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Procedural scenes, quadruped and a clip dataset.
    Synth(synth::Args),
    /// Train the trajectory and articulation VAEs.
    Train(train::Args),
    /// Sample a motion in a background mesh and export it.
    Generate(generate::Args),
    /// Recon, diversity and floating error of a checkpoint.
    Eval(eval::Args),
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Synth(a) => synth::run(a),
        Command::Train(a) => train::run(a),
        Command::Generate(a) => generate::run(a),
        Command::Eval(a) => eval::run(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(e.downcast_ref::<Exit>().map_or(1, |x| x.code))
        }
    }
}

/// `VPET_THREADS` caps any thread count the command would otherwise use.
fn thread_cap(requested: usize) -> anyhow::Result<usize> {
    match std::env::var("VPET_THREADS") {
        Ok(v) => {
            let cap: usize = v.trim().parse().map_err(|_| anyhow::anyhow!("VPET_THREADS={v:?} is not a count"))?;
            Ok(requested.min(cap.max(1)))
        }
        Err(_) => Ok(requested),
    }
}

/// Writes the resolved settings of a run as `key=value` lines.
fn write_echo(dir: &Path, lines: &str) -> anyhow::Result<()> {
    let path = dir.join("config.txt");
    std::fs::write(&path, lines).with_context(|| format!("writing {}", path.display()))
}

fn create_dir(dir: &Path) -> anyhow::Result<()> {
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}
