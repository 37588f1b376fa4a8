//! Command-line front end.
//!
//! Exit codes: 0 success, 1 other failure, 2 parse error or unknown key,
//! 3 validation error or unknown preset, 4 runtime blow-up (with a
//! `diagnostics.txt` in the output directory).

pub mod config;
pub mod output;
pub mod reproduce;
pub mod run;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use crate::error::{Error, Result};
use crate::presets::Scale;
use config::{ExperimentBlock, ExperimentConfig, ExperimentKind};
use reproduce::Preset;

#[derive(Debug, Parser)]
#[command(name = "slowfast", version, about = "Two-scale rescaled Lorenz-96 laboratory")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Args)]
pub struct Common {
    /// Experiment configuration file; defaults apply when omitted.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Output directory, overriding the configuration.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Seed for every seeded stage.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Applies the desk or paper run lengths on top of the configuration.
    #[arg(long)]
    pub scale: Option<String>,
    /// Worker threads for ensembles.
    #[arg(long)]
    pub threads: Option<usize>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    Calibrate(Common),
    Simulate(Common),
    Divergence(Common),
    Response(Common),
    Stats(Common),
    EnergyCheck(Common),
    /// Regenerates a table or figure: table1, table2, fig2 or fig4.
    Reproduce {
        preset: String,
        #[command(flatten)]
        common: Common,
    },
}

/// Process exit code for an error.
pub fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Parse { .. } | Error::UnknownKey { .. } => 2,
        Error::Validation(_) => 3,
        Error::BlowUp { .. } | Error::TooManyExclusions { .. } => 4,
        _ => 1,
    }
}

/// Overrides run lengths with the named scale.
pub fn apply_scale(cfg: &mut ExperimentConfig, scale: Scale) {
    let s = scale.settings();
    if !matches!(cfg.experiment, ExperimentBlock::Response { .. } | ExperimentBlock::EnergyCheck { .. }) {
        cfg.integrator.dt = s.dt;
    }
    match &mut cfg.experiment {
        ExperimentBlock::Simulate { t_spinup, .. } => *t_spinup = s.t_spinup,
        ExperimentBlock::Divergence {
            t_spinup, members, ..
        } => {
            *t_spinup = s.t_spinup;
            *members = s.n_members;
        }
        ExperimentBlock::Stats {
            t_spinup, t_window, ..
        } => {
            *t_spinup = s.t_spinup;
            *t_window = s.t_window;
        }
        _ => {}
    }
}

fn load(kind: ExperimentKind, c: &Common) -> Result<ExperimentConfig> {
    let mut cfg = match &c.config {
        Some(path) => ExperimentConfig::load(path, Some(kind))?,
        None => ExperimentConfig::default_for(kind),
    };
    if let Some(seed) = c.seed {
        cfg = cfg.with_seed(seed);
    }
    if let Some(s) = &c.scale {
        apply_scale(&mut cfg, s.parse()?);
    }
    if let Some(out) = &c.out {
        cfg.output_dir = out.clone();
    }
    cfg.validate()?;
    Ok(cfg)
}

fn init_threads(n: Option<usize>) -> Result<()> {
    if let Some(n) = n {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Error::InvalidInput(e.to_string()))?;
    }
    Ok(())
}

fn write_diagnostics(dir: &Path, e: &Error) {
    let _ = std::fs::create_dir_all(dir);
    let _ = std::fs::write(dir.join("diagnostics.txt"), format!("{e}\n{e:?}\n"));
}

/// Dispatches a parsed command line, returning the process exit code.
pub fn main_with(cli: Cli) -> ExitCode {
    let (common, out_dir, result) = match cli.command {
        Command::Reproduce { preset, common } => {
            let out = common
                .out
                .clone()
                .unwrap_or_else(|| PathBuf::from("out").join(&preset));
            let r = (|| {
                init_threads(common.threads)?;
                let preset: Preset = preset.parse()?;
                let scale = match &common.scale {
                    Some(s) => s.parse()?,
                    None => Scale::Desk,
                };
                reproduce::reproduce(preset, scale, &out, common.seed.unwrap_or(0))
            })();
            (common, Some(out), r)
        }
        cmd => {
            let (kind, common) = match cmd {
                Command::Calibrate(c) => (ExperimentKind::Calibrate, c),
                Command::Simulate(c) => (ExperimentKind::Simulate, c),
                Command::Divergence(c) => (ExperimentKind::Divergence, c),
                Command::Response(c) => (ExperimentKind::Response, c),
                Command::Stats(c) => (ExperimentKind::Stats, c),
                Command::EnergyCheck(c) => (ExperimentKind::EnergyCheck, c),
                Command::Reproduce { .. } => unreachable!(),
            };
            let mut out_dir = common.out.clone();
            let r = init_threads(common.threads).and_then(|_| load(kind, &common)).and_then(|cfg| {
                out_dir = Some(cfg.output_dir.clone());
                run::run(&cfg)
            });
            (common, out_dir, r)
        }
    };
    let _ = common;
    match result {
        Ok(m) => {
            println!("wrote {} files", m.files.len() + 1);
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            let code = exit_code(&e);
            if code == 4 {
                if let Some(dir) = &out_dir {
                    write_diagnostics(dir, &e);
                }
            }
            ExitCode::from(code)
        }
    }
}

pub fn main() -> ExitCode {
    main_with(Cli::parse())
}
