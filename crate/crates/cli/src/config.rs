//! Run configuration: a flat `key = value` file plus command-line overrides.

use std::path::PathBuf;

use occamlme_core::sim::{Algorithm, SimConfig, StudySettings};
use occamlme_core::skewt::LatentMode;
use occamlme_core::{EmConfig, ExponentConvention, SlabConvention, VbConfig};
use serde::{Deserialize, Serialize};

use crate::error::CliError;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    #[default]
    NormalEm,
    SkewtVb,
    Simulate,
}

impl Mode {
    pub fn name(self) -> &'static str {
        match self {
            Mode::NormalEm => "normal-em",
            Mode::SkewtVb => "skewt-vb",
            Mode::Simulate => "simulate",
        }
    }
}

/// Simulation grid used in `simulate` mode.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Grid {
    /// The single cell given by the `sim_*` keys.
    #[default]
    Single,
    /// That cell crossed with `q_prop ∈ {0.15, 0.3}` and `K ∈ {30, 100}`.
    Symbols,
    /// The complete factorial design at `sim_m` individuals.
    Full,
}

/// Every setting of a run. Unset tolerances and iteration caps take the
/// defaults of the selected fitting procedure.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub mode: Mode,
    pub input: Option<PathBuf>,
    pub out_dir: PathBuf,

    pub id_column: String,
    pub response_column: String,
    /// Fixed-effect covariates besides the intercept.
    pub fixed_columns: Vec<String>,
    /// Candidate random-effect covariates.
    pub random_columns: Vec<String>,
    /// Covariate entering the fixed effects as a polynomial of degree
    /// `poly_degree`, placed right after the intercept.
    pub time_column: Option<String>,
    pub poly_degree: usize,
    pub curve_from: f64,
    pub curve_to: f64,
    /// Points of the population curve; zero disables it.
    pub curve_points: usize,

    pub k: usize,
    pub l: usize,
    pub epsilon: f64,
    pub tol: Option<f64>,
    pub max_iter: Option<usize>,
    pub seed: u64,
    pub mc_draws: usize,
    pub exponent_convention: ExponentConvention,
    pub slab_convention: SlabConvention,
    pub score_includes_prior: bool,
    pub init_a: f64,
    pub init_f: f64,
    pub estimate_c: bool,
    pub estimate_f: bool,
    pub smoothing_window: usize,
    /// Worker threads; results are identical for a given count.
    pub threads: usize,

    pub grid: Grid,
    pub algorithms: Vec<Algorithm>,
    pub sim_m: usize,
    pub sim_p: usize,
    pub sim_h: f64,
    pub sim_q_prop: f64,
    pub sim_c: f64,
    pub sim_f: f64,
    pub replicates: usize,
    pub metric_literal: bool,
    /// Add a mean-seconds column to the results table (not reproducible).
    pub report_timing: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        let em = EmConfig::default();
        let vb = VbConfig::default();
        let sim = SimConfig::default();
        Self {
            mode: Mode::NormalEm,
            input: None,
            out_dir: PathBuf::from("out"),
            id_column: "id".into(),
            response_column: "y".into(),
            fixed_columns: Vec::new(),
            random_columns: Vec::new(),
            time_column: None,
            poly_degree: 1,
            curve_from: 0.0,
            curve_to: 1.0,
            curve_points: 0,
            k: em.k,
            l: em.l,
            epsilon: em.epsilon,
            tol: None,
            max_iter: None,
            seed: em.seed,
            mc_draws: vb.mc_draws,
            exponent_convention: em.exponent_convention,
            slab_convention: em.slab_convention,
            score_includes_prior: em.score_includes_prior,
            init_a: em.init_a,
            init_f: vb.init_f,
            estimate_c: vb.estimate_c,
            estimate_f: vb.estimate_f,
            smoothing_window: vb.smoothing_window,
            threads: 1,
            grid: Grid::Single,
            algorithms: vec![Algorithm::SkewtVb],
            sim_m: sim.m,
            sim_p: sim.p,
            sim_h: sim.h,
            sim_q_prop: sim.q_prop,
            sim_c: sim.c,
            sim_f: sim.f,
            replicates: sim.replicates,
            metric_literal: false,
            report_timing: false,
        }
    }
}

fn parse<T: std::str::FromStr>(key: &str, value: &str) -> Result<T, CliError> {
    value
        .parse()
        .map_err(|_| CliError::Config(format!("cannot parse `{value}` for `{key}`")))
}

fn parse_bool(key: &str, value: &str) -> Result<bool, CliError> {
    match value.to_ascii_lowercase().as_str() {
        "true" | "yes" | "1" => Ok(true),
        "false" | "no" | "0" => Ok(false),
        _ => Err(CliError::Config(format!("cannot parse `{value}` for `{key}` as a boolean"))),
    }
}

/// Parses a kebab-case enum value through its serde representation.
fn parse_enum<T: serde::de::DeserializeOwned>(key: &str, value: &str) -> Result<T, CliError> {
    serde_json::from_value(serde_json::Value::String(value.to_string()))
        .map_err(|_| CliError::Config(format!("unknown value `{value}` for `{key}`")))
}

fn parse_list(value: &str) -> Vec<String> {
    value
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(String::from)
        .collect()
}

impl RunConfig {
    /// Sets one key from its textual value.
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), CliError> {
        let value = value.trim();
        match key.trim().to_ascii_lowercase().replace('-', "_").as_str() {
            "mode" => self.mode = parse_enum(key, value)?,
            "input" => self.input = Some(PathBuf::from(value)),
            "out_dir" => self.out_dir = PathBuf::from(value),
            "id_column" => self.id_column = value.into(),
            "response_column" => self.response_column = value.into(),
            "fixed_columns" => self.fixed_columns = parse_list(value),
            "random_columns" => self.random_columns = parse_list(value),
            "time_column" => self.time_column = (!value.is_empty()).then(|| value.to_string()),
            "poly_degree" => self.poly_degree = parse(key, value)?,
            "curve_from" => self.curve_from = parse(key, value)?,
            "curve_to" => self.curve_to = parse(key, value)?,
            "curve_points" => self.curve_points = parse(key, value)?,
            "k" => self.k = parse(key, value)?,
            "l" => self.l = parse(key, value)?,
            "epsilon" => self.epsilon = parse(key, value)?,
            "tol" => self.tol = Some(parse(key, value)?),
            "max_iter" => self.max_iter = Some(parse(key, value)?),
            "seed" => self.seed = parse(key, value)?,
            "mc_draws" => self.mc_draws = parse(key, value)?,
            "exponent_convention" => self.exponent_convention = parse_enum(key, value)?,
            "slab_convention" => self.slab_convention = parse_enum(key, value)?,
            "score_includes_prior" => self.score_includes_prior = parse_bool(key, value)?,
            "init_a" => self.init_a = parse(key, value)?,
            "init_f" => self.init_f = parse(key, value)?,
            "estimate_c" => self.estimate_c = parse_bool(key, value)?,
            "estimate_f" => self.estimate_f = parse_bool(key, value)?,
            "smoothing_window" => self.smoothing_window = parse(key, value)?,
            "threads" => self.threads = parse(key, value)?,
            "grid" => self.grid = parse_enum(key, value)?,
            "algorithms" => {
                self.algorithms = parse_list(value)
                    .iter()
                    .map(|a| parse_enum(key, a))
                    .collect::<Result<_, _>>()?
            }
            "sim_m" => self.sim_m = parse(key, value)?,
            "sim_p" => self.sim_p = parse(key, value)?,
            "sim_h" => self.sim_h = parse(key, value)?,
            "sim_q_prop" => self.sim_q_prop = parse(key, value)?,
            "sim_c" => self.sim_c = parse(key, value)?,
            "sim_f" => self.sim_f = parse(key, value)?,
            "replicates" => self.replicates = parse(key, value)?,
            "metric_literal" => self.metric_literal = parse_bool(key, value)?,
            "report_timing" => self.report_timing = parse_bool(key, value)?,
            _ => return Err(CliError::Config(format!("unknown configuration key `{key}`"))),
        }
        Ok(())
    }

    /// Applies a `key = value` text: one pair per line, `#` starts a comment.
    pub fn apply_text(&mut self, text: &str) -> Result<(), CliError> {
        for (number, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| CliError::Config(format!("line {}: expected `key = value`, got `{line}`", number + 1)))?;
            self.set(key, value)?;
        }
        Ok(())
    }

    pub fn from_text(text: &str) -> Result<Self, CliError> {
        let mut cfg = Self::default();
        cfg.apply_text(text)?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let fail = |msg: &str| Err(CliError::Config(msg.into()));
        if self.k == 0 {
            return fail("K must be at least 1");
        }
        if !(0.0..1.0).contains(&self.epsilon) {
            return fail("epsilon must lie in [0, 1)");
        }
        if self.max_iter == Some(0) {
            return fail("max_iter must be at least 1");
        }
        if self.threads == 0 {
            return fail("threads must be at least 1");
        }
        match self.mode {
            Mode::Simulate => {
                if self.algorithms.is_empty() {
                    return fail("algorithms must name at least one procedure");
                }
            }
            Mode::NormalEm | Mode::SkewtVb => {
                if self.input.is_none() {
                    return fail("an input CSV is required for fitting");
                }
                if self.time_column.is_some() && self.poly_degree == 0 {
                    return fail("poly_degree must be at least 1 when time_column is set");
                }
                if self.curve_points > 0 && self.time_column.is_none() {
                    return fail("curve_points requires time_column");
                }
            }
        }
        Ok(())
    }

    /// Fit settings for the fitting modes and for every simulation cell.
    pub fn vb_config(&self) -> VbConfig {
        let defaults = match self.mode {
            Mode::NormalEm => EmConfig::default(),
            Mode::SkewtVb | Mode::Simulate => VbConfig::default().em,
        };
        VbConfig {
            em: EmConfig {
                k: self.k,
                l: self.l,
                epsilon: self.epsilon,
                tol: self.tol.unwrap_or(defaults.tol),
                max_iter: self.max_iter.unwrap_or(defaults.max_iter),
                seed: self.seed,
                exponent_convention: self.exponent_convention,
                slab_convention: self.slab_convention,
                score_includes_prior: self.score_includes_prior,
                init_a: self.init_a,
                initial_globals: None,
            },
            mc_draws: self.mc_draws,
            latent_mode: LatentMode::Full,
            estimate_c: self.estimate_c,
            estimate_f: self.estimate_f,
            init_f: self.init_f,
            smoothing_window: self.smoothing_window,
        }
    }

    pub fn sim_cell(&self) -> SimConfig {
        SimConfig {
            m: self.sim_m,
            p: self.sim_p,
            h: self.sim_h,
            q_prop: self.sim_q_prop,
            c: self.sim_c,
            f: self.sim_f,
            k: self.k,
            replicates: self.replicates,
            seed: self.seed,
        }
    }

    pub fn study_settings(&self) -> StudySettings {
        StudySettings {
            algorithms: self.algorithms.clone(),
            fit: self.vb_config(),
            metric_literal: self.metric_literal,
        }
    }
}
