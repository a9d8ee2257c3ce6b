//! Batch front end for `occamlme-core`.
//!
//! A run is described by a [`RunConfig`], assembled from a flat
//! `key = value` file, command-line flags and `--set key=value` overrides
//! (later sources win). Fitting modes read a long-format CSV and write
//! `fit.json`, `trace.jsonl`, `windows.tsv` and `trajectories.tsv`
//! (plus `curve.tsv` when a population curve is requested); `simulate` writes
//! `results.tsv` and `results.json`. Every run writes `manifest.json`, from
//! which it can be repeated bit for bit at the same thread count. Failures
//! leave an `error.json` in the output directory and exit nonzero.

pub mod config;
pub mod curve;
pub mod data;
pub mod error;
pub mod run;

use std::path::PathBuf;

use clap::Parser;

pub use config::{Grid, Mode, RunConfig};
pub use error::CliError;
pub use run::{run, Manifest};

#[derive(Debug, Clone, Default, Parser)]
#[command(name = "occamlme", version, about = "Per-individual variable selection in sparse linear mixed models")]
pub struct Args {
    /// normal-em, skewt-vb or simulate.
    #[arg(long)]
    pub mode: Option<String>,
    /// Flat `key = value` configuration file.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Long-format CSV with one row per observation.
    #[arg(long)]
    pub input: Option<PathBuf>,
    #[arg(long = "out-dir")]
    pub out_dir: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub threads: Option<usize>,
    /// Occam's window size.
    #[arg(long = "K")]
    pub k: Option<usize>,
    /// Window-search updates per iteration.
    #[arg(long = "L")]
    pub l: Option<usize>,
    #[arg(long = "max-iter")]
    pub max_iter: Option<usize>,
    /// Any configuration key, e.g. `--set mc_draws=400`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub set: Vec<String>,
    /// Repeat the run recorded in a manifest; other flags still override it.
    #[arg(long = "from-manifest", conflicts_with = "config")]
    pub from_manifest: Option<PathBuf>,
}

impl Args {
    /// Builds the configuration: defaults or manifest, then the config file,
    /// then flags, then `--set` pairs.
    pub fn resolve(&self) -> Result<RunConfig, CliError> {
        let mut cfg = match &self.from_manifest {
            Some(path) => {
                let manifest = Manifest::read(path)?;
                manifest.check_input()?;
                manifest.config
            }
            None => RunConfig::default(),
        };
        if let Some(path) = &self.config {
            let text = std::fs::read_to_string(path).map_err(|e| CliError::io(format!("reading {}", path.display()), e))?;
            cfg.apply_text(&text)?;
        }
        if let Some(mode) = &self.mode {
            cfg.set("mode", mode)?;
        }
        if let Some(input) = &self.input {
            cfg.input = Some(input.clone());
        }
        if let Some(dir) = &self.out_dir {
            cfg.out_dir = dir.clone();
        }
        if let Some(seed) = self.seed {
            cfg.seed = seed;
        }
        if let Some(threads) = self.threads {
            cfg.threads = threads;
        }
        if let Some(k) = self.k {
            cfg.k = k;
        }
        if let Some(l) = self.l {
            cfg.l = l;
        }
        if let Some(max_iter) = self.max_iter {
            cfg.max_iter = Some(max_iter);
        }
        for pair in &self.set {
            let (key, value) = pair
                .split_once('=')
                .ok_or_else(|| CliError::Config(format!("--set expects KEY=VALUE, got `{pair}`")))?;
            cfg.set(key, value)?;
        }
        Ok(cfg)
    }
}

/// Resolves and runs `args`. On failure writes `error.json` into the output
/// directory when one is known, and returns the error.
pub fn execute(args: &Args) -> Result<Vec<PathBuf>, CliError> {
    let mut out_dir = args.out_dir.clone();
    let result = args.resolve().and_then(|cfg| {
        out_dir = Some(cfg.out_dir.clone());
        run(&cfg)
    });
    if let (Err(e), Some(dir)) = (&result, out_dir) {
        if std::fs::create_dir_all(&dir).is_ok() {
            let body = serde_json::to_string_pretty(&e.report()).expect("error reports serialize");
            let _ = std::fs::write(dir.join("error.json"), body + "\n");
        }
    }
    result
}
