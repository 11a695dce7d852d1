use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};

use gpufs_sim::config::{ExperimentConfig, WorkloadKind};
use gpufs_sim::experiments::{preset, run, run_preset, sweep, PRESETS};
use gpufs_sim::metrics::{runs_csv, sweep_csv};

#[derive(Parser)]
#[command(
    name = "gpufs-sim",
    version,
    about = "Discrete-event simulator of a GPU file-system I/O stack"
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run one configuration for `run.repetitions` seeds.
    Run {
        #[arg(long)]
        config: Option<PathBuf>,
        /// `key=value` override, may repeat.
        #[arg(long = "set")]
        set: Vec<String>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run a configuration once per value of one key.
    Sweep {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long = "set")]
        set: Vec<String>,
        #[arg(long)]
        param: String,
        /// Comma-separated values.
        #[arg(long, value_delimiter = ',')]
        values: Vec<String>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run a named figure preset.
    Preset {
        name: String,
        #[arg(long, default_value_t = 0.1)]
        scale: f64,
        #[arg(long)]
        reps: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        /// Directory receiving `<name>.csv`; stdout when absent.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Replay a trace file through the host stack alone.
    Replay {
        #[arg(long)]
        trace: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long = "set")]
        set: Vec<String>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// List presets and configuration keys.
    List,
}

fn load(config: &Option<PathBuf>, set: &[String]) -> Result<ExperimentConfig> {
    let mut cfg = ExperimentConfig::default();
    if let Some(path) = config {
        let text =
            fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        cfg.apply_text(&text)
            .with_context(|| format!("in {}", path.display()))?;
    }
    for kv in set {
        cfg.apply_override(kv)?;
    }
    Ok(cfg)
}

fn emit(text: &str, out: Option<&Path>) -> Result<()> {
    match out {
        Some(p) => fs::write(p, text).with_context(|| format!("writing {}", p.display())),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn main() -> Result<()> {
    match Cli::parse().cmd {
        Cmd::Run { config, set, out } => {
            let cfg = load(&config, &set)?;
            let runs = run(&cfg)?;
            emit(&runs_csv(&runs), out.as_deref().or(cfg.output.as_deref()))
        }
        Cmd::Sweep {
            config,
            set,
            param,
            values,
            out,
        } => {
            if values.is_empty() {
                bail!("--values needs at least one value");
            }
            let cfg = load(&config, &set)?;
            let rows = sweep(&cfg, &param, &values)?;
            emit(
                &sweep_csv(&param, &rows),
                out.as_deref().or(cfg.output.as_deref()),
            )
        }
        Cmd::Preset {
            name,
            scale,
            reps,
            seed,
            out,
        } => {
            let p = preset(&name, scale)?;
            eprintln!("{}: {}", p.name, p.description);
            let csv = run_preset(&p, reps, seed)?;
            match out {
                Some(dir) => {
                    fs::create_dir_all(&dir)
                        .with_context(|| format!("creating {}", dir.display()))?;
                    emit(&csv, Some(&dir.join(format!("{name}.csv"))))
                }
                None => emit(&csv, None),
            }
        }
        Cmd::Replay {
            trace,
            config,
            set,
            out,
        } => {
            let mut cfg = load(&config, &set)?;
            cfg.workload.kind = WorkloadKind::Trace;
            cfg.workload.trace_file = Some(trace);
            cfg.replay = true;
            let runs = run(&cfg)?;
            emit(&runs_csv(&runs), out.as_deref().or(cfg.output.as_deref()))
        }
        Cmd::List => {
            println!("presets: {}", PRESETS.join(" "));
            println!("keys:");
            print!("{}", ExperimentConfig::default().to_text());
            Ok(())
        }
    }
}
