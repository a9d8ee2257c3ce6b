//! Execution of a resolved [`RunConfig`] and the files it writes.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use occamlme_core::normal_em::IterationRecord;
use occamlme_core::sim::{full_grid, results_table, run_study, symbol_grid, CellResult};
use occamlme_core::{em_fit, vb_fit, GlobalParams, IndividualData, OccamWindow};
use serde::{Deserialize, Serialize};
use serde_json::json;
use sha2::{Digest, Sha256};

use crate::config::{Grid, Mode, RunConfig};
use crate::curve::{linspace, population_curve, time_grid};
use crate::data::{load_csv, ColumnRoles};
use crate::error::CliError;

pub const MANIFEST: &str = "manifest.json";

/// Everything needed to repeat a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub software: String,
    pub version: String,
    pub config: RunConfig,
    /// SHA-256 of the input file, checked on replay.
    pub input_sha256: Option<String>,
}

impl Manifest {
    pub fn read(path: &Path) -> Result<Self, CliError> {
        let text = fs::read_to_string(path).map_err(|e| CliError::io(format!("reading {}", path.display()), e))?;
        serde_json::from_str(&text).map_err(|e| CliError::Manifest(format!("{}: {e}", path.display())))
    }

    /// Fails when the recorded input has changed since the manifest was
    /// written.
    pub fn check_input(&self) -> Result<(), CliError> {
        if let (Some(path), Some(expected)) = (&self.config.input, &self.input_sha256) {
            let actual = file_sha256(path)?;
            if &actual != expected {
                return Err(CliError::Manifest(format!(
                    "input {} changed since the manifest was written (sha256 {actual}, recorded {expected})",
                    path.display()
                )));
            }
        }
        Ok(())
    }
}

fn file_sha256(path: &Path) -> Result<String, CliError> {
    let bytes = fs::read(path).map_err(|e| CliError::io(format!("reading {}", path.display()), e))?;
    Ok(Sha256::digest(&bytes).iter().map(|b| format!("{b:02x}")).collect())
}

fn write(dir: &Path, name: &str, contents: &str) -> Result<PathBuf, CliError> {
    let path = dir.join(name);
    fs::write(&path, contents).map_err(|e| CliError::io(format!("writing {}", path.display()), e))?;
    Ok(path)
}

fn to_json<T: Serialize>(value: &T) -> String {
    let mut text = serde_json::to_string_pretty(value).expect("output types serialize");
    text.push('\n');
    text
}

/// Runs `cfg` and returns the paths written, manifest first.
pub fn run(cfg: &RunConfig) -> Result<Vec<PathBuf>, CliError> {
    cfg.validate()?;
    fs::create_dir_all(&cfg.out_dir).map_err(|e| CliError::io(format!("creating {}", cfg.out_dir.display()), e))?;
    let manifest = Manifest {
        software: env!("CARGO_PKG_NAME").into(),
        version: env!("CARGO_PKG_VERSION").into(),
        config: cfg.clone(),
        input_sha256: cfg.input.as_deref().map(file_sha256).transpose()?,
    };
    let mut written = vec![write(&cfg.out_dir, MANIFEST, &to_json(&manifest))?];
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.threads)
        .build()
        .map_err(|e| CliError::Config(format!("cannot start {} worker threads: {e}", cfg.threads)))?;
    let outputs = pool.install(|| match cfg.mode {
        Mode::NormalEm | Mode::SkewtVb => fit_mode(cfg),
        Mode::Simulate => simulate_mode(cfg),
    })?;
    for (name, contents) in outputs {
        written.push(write(&cfg.out_dir, &name, &contents)?);
    }
    Ok(written)
}

/// Outcome of either fitting procedure, reduced to what the outputs need.
struct FitSummary {
    globals: GlobalParams,
    windows: Vec<OccamWindow>,
    trace: Vec<IterationRecord>,
    iterations: usize,
    converged: bool,
    objective: f64,
    q_value: f64,
    draws: Option<usize>,
}

fn fit_mode(cfg: &RunConfig) -> Result<Vec<(String, String)>, CliError> {
    let roles = ColumnRoles::from_config(cfg);
    let input = cfg.input.as_deref().expect("validated: fitting modes have an input");
    let data = load_csv(input, &roles)?;
    let vb = cfg.vb_config();
    let fit = match cfg.mode {
        Mode::NormalEm => {
            let st = em_fit(&data, &vb.em)?;
            FitSummary {
                globals: st.globals,
                windows: st.windows,
                trace: st.trace,
                iterations: st.iteration,
                converged: st.converged,
                objective: st.objective,
                q_value: st.q_value,
                draws: None,
            }
        }
        _ => {
            let st = vb_fit(&data, &vb)?;
            FitSummary {
                globals: st.globals,
                windows: st.windows,
                trace: st.trace,
                iterations: st.iteration,
                converged: st.converged,
                objective: st.objective,
                q_value: st.q_value,
                draws: Some(st.draws),
            }
        }
    };
    let mut out = vec![
        ("fit.json".to_string(), fit_json(cfg, &roles, &data, &fit)),
        ("trace.jsonl".to_string(), trace_jsonl(&fit.trace)),
        ("windows.tsv".to_string(), windows_tsv(&roles, &data, &fit.windows)),
        ("trajectories.tsv".to_string(), trajectories_tsv(&data, &fit)),
    ];
    if cfg.curve_points > 0 {
        let times = linspace(cfg.curve_from, cfg.curve_to, cfg.curve_points);
        let values = population_curve(&fit.globals.zeta_star, &time_grid(&roles, &times))?;
        let mut table = format!("{}\tpopulation_fit\n", roles.time.as_ref().map_or("time", |t| t.0.as_str()));
        for (t, v) in times.iter().zip(&values) {
            let _ = writeln!(table, "{t}\t{v}");
        }
        out.push(("curve.tsv".to_string(), table));
    }
    Ok(out)
}

fn fit_json(cfg: &RunConfig, roles: &ColumnRoles, data: &[IndividualData], fit: &FitSummary) -> String {
    let fixed: Vec<_> = roles
        .fixed_names()
        .into_iter()
        .zip(&fit.globals.zeta_star)
        .map(|(name, value)| json!({ "name": name, "value": value }))
        .collect();
    let individuals: Vec<_> = data
        .iter()
        .zip(&fit.windows)
        .map(|(d, w)| {
            let top = w.top();
            json!({
                "id": d.id,
                "n": d.n(),
                "top_model": w.fits()[top].gamma.bitstring(),
                "top_weight": w.weights()[top],
                "inclusion": w.inclusion_probabilities(),
                "coefficients": w.averaged_coefficients(),
            })
        })
        .collect();
    let later = || fit.trace.iter().skip(1);
    to_json(&json!({
        "mode": cfg.mode.name(),
        "converged": fit.converged,
        "iterations": fit.iterations,
        "objective": fit.objective,
        "q_value": fit.q_value,
        "draws": fit.draws,
        "globals": fit.globals,
        "fixed_effects": fixed,
        "random_effects": roles.random,
        "objective_trace": later().map(|r| r.objective).collect::<Vec<_>>(),
        "q_trace": later().map(|r| r.q).collect::<Vec<_>>(),
        "individuals": individuals,
    }))
}

fn trace_jsonl(trace: &[IterationRecord]) -> String {
    let mut out = String::new();
    for record in trace {
        out.push_str(&serde_json::to_string(record).expect("trace records serialize"));
        out.push('\n');
    }
    out
}

fn windows_tsv(roles: &ColumnRoles, data: &[IndividualData], windows: &[OccamWindow]) -> String {
    let mut out = String::from("id\trank\tmodel\tsize\teffects\tweight\tlog_marginal\tlog_prior\n");
    for (d, w) in data.iter().zip(windows) {
        let mut order: Vec<usize> = (0..w.len()).collect();
        order.sort_by(|&a, &b| w.weights()[b].total_cmp(&w.weights()[a]).then(a.cmp(&b)));
        for (rank, &k) in order.iter().enumerate() {
            let fit = &w.fits()[k];
            let effects: Vec<&str> = fit.gamma.selected().map(|j| roles.random[j].as_str()).collect();
            let _ = writeln!(
                out,
                "{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}",
                d.id,
                rank + 1,
                fit.gamma.bitstring(),
                fit.gamma.count(),
                if effects.is_empty() { "-".to_string() } else { effects.join(";") },
                w.weights()[k],
                fit.log_marginal,
                fit.log_prior
            );
        }
    }
    out
}

/// Per observation: the response, the population fit `Xζ*` and the
/// individual fit `Xζ* + [1 | S] E[β]` with model-averaged coefficients.
fn trajectories_tsv(data: &[IndividualData], fit: &FitSummary) -> String {
    let zeta = nalgebra::DVector::from_column_slice(&fit.globals.zeta_star);
    let mut out = String::from("id\tobs\ty\tfixed_fit\tindividual_fit\n");
    for (d, w) in data.iter().zip(&fit.windows) {
        let population = &d.x * &zeta;
        let beta = nalgebra::DVector::from_vec(w.averaged_coefficients());
        let individual = &population + d.augmented_random_design() * beta;
        for r in 0..d.n() {
            let _ = writeln!(out, "{}\t{}\t{}\t{}\t{}", d.id, r + 1, d.y[r], population[r], individual[r]);
        }
    }
    out
}

fn simulate_mode(cfg: &RunConfig) -> Result<Vec<(String, String)>, CliError> {
    let base = cfg.sim_cell();
    let grid = match cfg.grid {
        Grid::Single => vec![base],
        Grid::Symbols => symbol_grid(&base),
        Grid::Full => full_grid(cfg.sim_m, cfg.replicates, cfg.seed),
    };
    let start = Instant::now();
    let clock = move || start.elapsed().as_secs_f64();
    let mut results: Vec<CellResult> = run_study(&grid, &cfg.study_settings(), &clock)?;
    if !cfg.report_timing {
        for r in &mut results {
            r.mean_seconds = None;
        }
    }
    Ok(vec![
        ("results.tsv".to_string(), results_table(&results, cfg.report_timing)),
        ("results.json".to_string(), to_json(&results)),
    ])
}
