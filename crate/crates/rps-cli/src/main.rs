//! `rps` — config-driven experiments with rough polyharmonic spline bases.
//!
//! Exit codes: 0 success, 1 configuration error, 2 solver error, 3 I/O error.

mod commands;
mod config;
mod output;
mod svg;

use std::path::{Path, PathBuf};

use clap::error::ErrorKind;
use clap::{Parser, Subcommand};

use rps_core::RpsError;

use crate::commands::Pipeline;
use crate::config::load_config;
use crate::output::OutputWriter;

#[derive(Parser)]
#[command(name = "rps", version, about = "Rough polyharmonic spline homogenization experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args)]
struct CommonArgs {
    /// Experiment config (JSON).
    #[arg(long)]
    config: PathBuf,
    /// Config overrides along dotted paths, e.g. --override layers=1..6
    #[arg(long = "override", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// Worker threads for basis solves (0 = library default).
    #[arg(long, default_value_t = 0)]
    workers: usize,
    /// Output directory (defaults to the config's outputs.dir, then
    /// $RPS_OUTPUT_DIR/<config stem>).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Run the experiment a config describes end to end.
    Run {
        /// Experiment config (JSON).
        config: PathBuf,
        #[arg(long = "override", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
        #[arg(long, default_value_t = 0)]
        workers: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Mesh and field summary plus plain-text mesh exports.
    MeshInfo(CommonArgs),
    /// Solve the basis functions and write objectives (and dumps).
    Basis(CommonArgs),
    /// Localization decay of one basis function over a layer range.
    Decay(CommonArgs),
    /// Elliptic solve: fine reference and coarse spaces, with error tables.
    Solve(CommonArgs),
    /// Wave equation on fine and coarse spaces.
    Wave(CommonArgs),
    /// Parabolic equation on fine and coarse spaces.
    Parabolic(CommonArgs),
    /// Recover a solution from nodal measurements.
    Recover(CommonArgs),
    /// Gram matrix P and Theta = P^-1 of the basis.
    Gram(CommonArgs),
}

fn main() {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                print!("{e}");
                std::process::exit(0);
            }
            eprintln!("{e}");
            std::process::exit(1);
        }
    };
    if let Err(e) = dispatch(cli) {
        eprintln!("error: {e}");
        std::process::exit(exit_code(&e));
    }
}

fn exit_code(e: &RpsError) -> i32 {
    match e {
        RpsError::Solver { .. }
        | RpsError::DegenerateSupport { .. }
        | RpsError::Conditioning { .. } => 2,
        RpsError::Io(_) => 3,
        _ => 1,
    }
}

fn out_dir(cfg_dir: Option<&PathBuf>, cli_out: Option<PathBuf>, config: &Path) -> PathBuf {
    if let Some(out) = cli_out {
        return out;
    }
    if let Some(dir) = cfg_dir {
        return dir.clone();
    }
    let root = std::env::var_os("RPS_OUTPUT_DIR")
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from("rps-out"));
    let stem = config
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "experiment".into());
    root.join(stem)
}

fn dispatch(cli: Cli) -> rps_core::Result<()> {
    let (config, overrides, workers, out, runner): (
        PathBuf,
        Vec<String>,
        usize,
        Option<PathBuf>,
        fn(&Pipeline, usize, &mut OutputWriter) -> rps_core::Result<()>,
    ) = match cli.command {
        Command::Run { config, overrides, workers, out } => {
            (config, overrides, workers, out, commands::run)
        }
        Command::MeshInfo(a) => (a.config, a.overrides, a.workers, a.out, |p, _, o| {
            commands::mesh_info(p, o)
        }),
        Command::Basis(a) => (a.config, a.overrides, a.workers, a.out, commands::basis),
        Command::Decay(a) => (a.config, a.overrides, a.workers, a.out, commands::decay),
        Command::Solve(a) => (a.config, a.overrides, a.workers, a.out, commands::solve),
        Command::Wave(a) => (a.config, a.overrides, a.workers, a.out, |p, w, o| {
            commands::timedep_cmd(p, w, true, o)
        }),
        Command::Parabolic(a) => (a.config, a.overrides, a.workers, a.out, |p, w, o| {
            commands::timedep_cmd(p, w, false, o)
        }),
        Command::Recover(a) => (a.config, a.overrides, a.workers, a.out, commands::recover_cmd),
        Command::Gram(a) => (a.config, a.overrides, a.workers, a.out, commands::gram_cmd),
    };

    let cfg = load_config(&config, &overrides)?;
    let dir = out_dir(cfg.outputs.dir.as_ref(), out, &config);
    let mut writer = OutputWriter::create(&dir)?;
    writer.log(format!(
        "config: {}",
        serde_json::to_string(&cfg).map_err(|e| RpsError::Config(e.to_string()))?
    ));
    if !overrides.is_empty() {
        writer.log(format!("overrides: {}", overrides.join(" ")));
    }
    let pipe = Pipeline::build(cfg)?;
    runner(&pipe, workers, &mut writer)?;
    let manifest = writer.finalize()?;
    println!("manifest: {}", manifest.display());
    Ok(())
}
