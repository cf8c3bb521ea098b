use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use fsosr_core::diagnostics::diagnose;
use fsosr_core::episode::EpisodeSpec;
use fsosr_core::feature_store::from_csv;
use fsosr_core::runner::{run, sweep_alpha, write_reports, RunConfig};
use fsosr_core::synth::{generate, SynthSpec};
use fsosr_core::{load_feature_store, sample_episode, save_feature_store, Error, Result, Split};

#[derive(Parser)]
#[command(name = "fsosr", version, about = "Few-shot open-set recognition on feature stores")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Convert a `label,f0,..` CSV plus a class-split JSON file into a store.
    Ingest {
        #[arg(long)]
        csv: PathBuf,
        #[arg(long)]
        splits: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Dump test-split episodes as JSON for inspection.
    Sample {
        #[arg(long)]
        store: PathBuf,
        /// Episode spec JSON; defaults when omitted.
        #[arg(long)]
        spec: Option<PathBuf>,
        #[arg(long, default_value_t = 5)]
        n: u64,
        #[arg(long)]
        dump: PathBuf,
    },
    /// Mean imposture factor, variance ratio and per-class table of a split.
    Diagnose {
        #[arg(long)]
        store: PathBuf,
        #[arg(long, default_value = "test")]
        split: Split,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Generate a synthetic Gaussian-mixture store.
    Synth {
        #[arg(long)]
        spec: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Evaluate the configured methods and write run_report.{json,csv}.
    Run {
        #[arg(long)]
        config: PathBuf,
    },
    /// Validation sweep of a hyperparameter.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, default_value = "ostim.alpha")]
        param: String,
        #[arg(long, value_delimiter = ',', required = true)]
        grid: Vec<f64>,
    },
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
}

fn write_json<T: serde::Serialize>(value: &T, out: Option<&Path>) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    match out {
        Some(path) => fs::write(path, text).map_err(|e| Error::Io { path: path.to_path_buf(), source: e }),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn execute(cmd: Command) -> Result<()> {
    match cmd {
        Command::Ingest { csv, splits, out } => {
            let fs_ = from_csv(&csv, &splits)?;
            save_feature_store(&fs_, &out)?;
            log::info!("wrote {} vectors of dim {} to {}", fs_.len(), fs_.dim(), out.display());
        }
        Command::Sample { store, spec, n, dump } => {
            let spec: EpisodeSpec = match spec {
                Some(p) => read_json(&p)?,
                None => EpisodeSpec::default(),
            };
            spec.validate()?;
            let fs_ = load_feature_store(&store)?;
            fs::create_dir_all(&dump).map_err(|e| Error::Io { path: dump.clone(), source: e })?;
            for i in 0..n {
                let ep = sample_episode(&fs_, &spec, i)?;
                log::info!("episode {i} checksum {:08x}", ep.checksum());
                write_json(&ep, Some(&dump.join(format!("episode_{i:05}.json"))))?;
            }
        }
        Command::Diagnose { store, split, out } => {
            let report = diagnose(&load_feature_store(&store)?, split)?;
            write_json(&report, out.as_deref())?;
        }
        Command::Synth { spec, out } => {
            let spec: SynthSpec = read_json(&spec)?;
            save_feature_store(&generate(&spec)?, &out)?;
        }
        Command::Run { config } => {
            let cfg = RunConfig::from_file(&config)?;
            let report = run(&cfg)?;
            match &cfg.output_dir {
                Some(dir) => write_reports(&report, dir)?,
                None => write_json(&report, None)?,
            }
        }
        Command::Sweep { config, param, grid } => {
            if param != "ostim.alpha" {
                return Err(Error::Config(format!("unsupported sweep parameter {param:?}; only ostim.alpha")));
            }
            let cfg = RunConfig::from_file(&config)?;
            let result = sweep_alpha(&load_feature_store(&cfg.store)?, &cfg, &grid)?;
            match &cfg.output_dir {
                Some(dir) => {
                    fs::create_dir_all(dir).map_err(|e| Error::Io { path: dir.clone(), source: e })?;
                    write_json(&result, Some(&dir.join("sweep_report.json")))?;
                }
                None => write_json(&result, None)?,
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match execute(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
