//! Synthetic longitudinal data with skew-t errors, replicated fits over a
//! factorial grid and the error metrics used to score them.
//!
//! Each individual has `n_i = 200` observations with probability `q_prop`
//! and 50 otherwise, a fixed-effect design of an intercept plus five standard
//! normal covariates, `p` standard normal candidate random-effect covariates,
//! `σ²_i ~ IG(10, 0.1)` and random effects `β_ik ~ h N(0, 1) + (1 − h) δ₀`.
//! The individual intercept is `N(0, σ²_i)` and always present. Errors follow
//! the latent construction of the skew-t law:
//! `e = c/√(1+c²) · d + ε` with `ρ ~ Gamma(f/2, f/2)`,
//! `d ~ |N(0, σ²/ρ)|` and `ε ~ N(0, σ²/(ρ(1+c²)))`.

use crate::error::{Error, Result};
use crate::model::{GlobalParams, IndividualData, ModelIndicator};
use crate::normal_em::em_fit;
use crate::par;
use crate::prelude::*;
use crate::rng::{stream, Purpose};
use crate::skewt::{vb_fit, VbConfig};
use crate::window::OccamWindow;
use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::{Distribution, Gamma, StandardNormal};
use serde::{Deserialize, Serialize};

/// Number of non-intercept fixed effects in generated data.
pub const FIXED_COVARIATES: usize = 5;
const LARGE_N: usize = 200;
const SMALL_N: usize = 50;
const SIGMA2_SHAPE: f64 = 10.0;
const SIGMA2_SCALE: f64 = 0.1;

/// One cell of the simulation design.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimConfig {
    /// Number of individuals.
    pub m: usize,
    /// Candidate random effects per individual.
    pub p: usize,
    /// Prior inclusion probability of each random effect.
    pub h: f64,
    /// Probability that an individual has the large sample size.
    pub q_prop: f64,
    pub c: f64,
    pub f: f64,
    /// Occam's window size used for fitting.
    pub k: usize,
    pub replicates: usize,
    pub seed: u64,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            m: 50,
            p: 10,
            h: 0.1,
            q_prop: 0.15,
            c: 0.0,
            f: 20.0,
            k: 30,
            replicates: 5,
            seed: 0,
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::Config(msg));
        if self.m == 0 {
            return fail("m must be at least 1".into());
        }
        if self.p == 0 {
            return fail("p must be at least 1".into());
        }
        if !(0.0..=1.0).contains(&self.h) {
            return fail(format!("h must lie in [0, 1], got {}", self.h));
        }
        if !(0.0..=1.0).contains(&self.q_prop) {
            return fail(format!("q_prop must lie in [0, 1], got {}", self.q_prop));
        }
        if !self.c.is_finite() {
            return fail(format!("c must be finite, got {}", self.c));
        }
        if !(self.f > 0.0) {
            return fail(format!("f must be positive, got {}", self.f));
        }
        if self.k == 0 {
            return fail("k must be at least 1".into());
        }
        if self.replicates == 0 {
            return fail("replicates must be at least 1".into());
        }
        Ok(())
    }
}

/// Generating values of one simulated dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct Truth {
    /// `(ζ0, ζ1, …, ζ5)` with `ζ0 = 0`.
    pub zeta: Vec<f64>,
    /// Per individual: `β_ik ≠ 0`.
    pub gamma: Vec<ModelIndicator>,
    /// Per individual: `(β_i1, β_i2, …)` with the random intercept first.
    pub beta: Vec<Vec<f64>>,
    pub sigma2: Vec<f64>,
    /// Per individual: the error draws added to the linear predictor.
    pub errors: Vec<Vec<f64>>,
}

#[derive(Debug, Clone)]
pub struct SimDataset {
    pub data: Vec<IndividualData>,
    pub truth: Truth,
}

fn normal<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    StandardNormal.sample(rng)
}

/// Draws one skew-t error with scale `σ²`.
pub fn skew_t_error<R: Rng + ?Sized>(sigma2: f64, c: f64, f: f64, rng: &mut R) -> f64 {
    let s = 1.0 + c * c;
    let rho = Gamma::new(0.5 * f, 2.0 / f).expect("positive f").sample(rng);
    let sd = (sigma2 / rho).sqrt();
    let d = (sd * normal(rng)).abs();
    c / s.sqrt() * d + sd / s.sqrt() * normal(rng)
}

/// Generates replicate `replicate` of `cfg`. Individual `i` draws from its
/// own stream, so the result does not depend on scheduling.
pub fn generate(cfg: &SimConfig, replicate: usize) -> Result<SimDataset> {
    cfg.validate()?;
    let rep = replicate as u64;
    let mut zeta_rng = stream(cfg.seed, Purpose::Simulation, rep, 0);
    let zeta: Vec<f64> = core::iter::once(0.0)
        .chain((0..FIXED_COVARIATES).map(|_| normal(&mut zeta_rng)))
        .collect();
    let precision = Gamma::new(SIGMA2_SHAPE, 1.0 / SIGMA2_SCALE).expect("valid gamma");
    let ids: Vec<usize> = (0..cfg.m).collect();
    let individuals = par::map(&ids, |_, &i| {
        let mut rng = stream(cfg.seed, Purpose::Simulation, rep, i as u64 + 1);
        let n = if rng.random::<f64>() < cfg.q_prop { LARGE_N } else { SMALL_N };
        let sigma2 = 1.0 / precision.sample(&mut rng);
        let mut gamma = ModelIndicator::empty(cfg.p);
        let mut beta = vec![sigma2.sqrt() * normal(&mut rng)];
        for k in 0..cfg.p {
            if rng.random::<f64>() < cfg.h {
                gamma.flip(k);
                beta.push(normal(&mut rng));
            } else {
                beta.push(0.0);
            }
        }
        let mut x = DMatrix::from_element(n, FIXED_COVARIATES + 1, 1.0);
        let mut s = DMatrix::zeros(n, cfg.p);
        let mut y = Vec::with_capacity(n);
        let mut errors = Vec::with_capacity(n);
        for r in 0..n {
            for col in 1..=FIXED_COVARIATES {
                x[(r, col)] = normal(&mut rng);
            }
            for col in 0..cfg.p {
                s[(r, col)] = normal(&mut rng);
            }
            let e = skew_t_error(sigma2, cfg.c, cfg.f, &mut rng);
            let fixed: f64 = (0..=FIXED_COVARIATES).map(|col| x[(r, col)] * zeta[col]).sum();
            let random: f64 = beta[0] + (0..cfg.p).map(|col| s[(r, col)] * beta[col + 1]).sum::<f64>();
            errors.push(e);
            y.push(fixed + random + e);
        }
        let data = IndividualData::new(format!("ind{i}"), y, x, s)?;
        Ok((data, gamma, beta, sigma2, errors))
    });
    let mut data = Vec::with_capacity(cfg.m);
    let mut truth = Truth {
        zeta,
        gamma: Vec::with_capacity(cfg.m),
        beta: Vec::with_capacity(cfg.m),
        sigma2: Vec::with_capacity(cfg.m),
        errors: Vec::with_capacity(cfg.m),
    };
    for (d, g, b, s2, e) in par::collect(individuals)? {
        data.push(d);
        truth.gamma.push(g);
        truth.beta.push(b);
        truth.sigma2.push(s2);
        truth.errors.push(e);
    }
    Ok(SimDataset { data, truth })
}

fn check_shapes(truth: &[Vec<ModelIndicator>], estimates: &[Vec<Vec<f64>>]) -> Result<usize> {
    if truth.is_empty() {
        return Err(Error::Domain("no replicates to score".into()));
    }
    if truth.len() != estimates.len() {
        return Err(Error::Domain(format!(
            "{} true replicates but {} estimated",
            truth.len(),
            estimates.len()
        )));
    }
    let mut cells = 0;
    for (r, (t, e)) in truth.iter().zip(estimates).enumerate() {
        if t.len() != e.len() {
            return Err(Error::Domain(format!(
                "replicate {r}: {} true individuals but {} estimated",
                t.len(),
                e.len()
            )));
        }
        for (i, (g, probs)) in t.iter().zip(e).enumerate() {
            if g.p() != probs.len() {
                return Err(Error::Domain(format!(
                    "replicate {r}, individual {i}: {} true effects but {} estimated",
                    g.p(),
                    probs.len()
                )));
            }
            cells += probs.len();
        }
    }
    Ok(cells)
}

fn squared_gaps(truth: &[Vec<ModelIndicator>], estimates: &[Vec<Vec<f64>>]) -> f64 {
    let mut total = 0.0;
    for (t, e) in truth.iter().zip(estimates) {
        for (g, probs) in t.iter().zip(e) {
            for (j, p) in probs.iter().enumerate() {
                let gap = if g.get(j) { 1.0 } else { 0.0 } - p;
                total += gap * gap;
            }
        }
    }
    total
}

/// Root mean square of `γ_true − E[γ | y]` over every (replicate,
/// individual, effect) triple. `truth[r][i]` and `estimates[r][i]` refer to
/// individual `i` of replicate `r`; the always-present intercept is not
/// scored.
pub fn rmse_gamma(truth: &[Vec<ModelIndicator>], estimates: &[Vec<Vec<f64>>]) -> Result<f64> {
    let cells = check_shapes(truth, estimates)?;
    if cells == 0 {
        return Err(Error::Domain("no effects to score".into()));
    }
    Ok((squared_gaps(truth, estimates) / cells as f64).sqrt())
}

/// The squared-error sum divided by `replicates · p`, without a square root
/// and without averaging over individuals.
pub fn rmse_gamma_literal(truth: &[Vec<ModelIndicator>], estimates: &[Vec<Vec<f64>>]) -> Result<f64> {
    check_shapes(truth, estimates)?;
    let p = truth.iter().flatten().map(|g| g.p()).next().unwrap_or(0);
    if p == 0 {
        return Err(Error::Domain("no effects to score".into()));
    }
    Ok(squared_gaps(truth, estimates) / (truth.len() * p) as f64)
}

/// [`rmse_gamma`] of the predictor that reports `value` for every effect.
pub fn rmse_gamma_constant(truth: &[Vec<ModelIndicator>], value: f64) -> Result<f64> {
    let estimates: Vec<Vec<Vec<f64>>> = truth
        .iter()
        .map(|t| t.iter().map(|g| vec![value; g.p()]).collect())
        .collect();
    rmse_gamma(truth, &estimates)
}

/// `√(mean (estimate − truth)²)`.
pub fn rmse_scalar(truth: f64, estimates: &[f64]) -> Result<f64> {
    if estimates.is_empty() {
        return Err(Error::Domain("no estimates to score".into()));
    }
    let ss: f64 = estimates.iter().map(|e| (e - truth) * (e - truth)).sum();
    Ok((ss / estimates.len() as f64).sqrt())
}

/// Fitting procedure applied to each replicate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Algorithm {
    NormalEm,
    SkewtVb,
}

impl Algorithm {
    pub fn name(self) -> &'static str {
        match self {
            Algorithm::NormalEm => "normal-em",
            Algorithm::SkewtVb => "skewt-vb",
        }
    }
}

/// Fit settings shared by every cell; the window size comes from the cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct StudySettings {
    pub algorithms: Vec<Algorithm>,
    pub fit: VbConfig,
    /// Report [`rmse_gamma_literal`] instead of [`rmse_gamma`].
    pub metric_literal: bool,
}

impl Default for StudySettings {
    fn default() -> Self {
        Self {
            algorithms: vec![Algorithm::SkewtVb],
            fit: VbConfig::default(),
            metric_literal: false,
        }
    }
}

/// Result of fitting one replicate.
#[derive(Debug, Clone)]
pub struct ReplicateOutcome {
    pub replicate: usize,
    pub truth: Vec<ModelIndicator>,
    /// `E[γ_ij | y]` per individual.
    pub inclusion: Vec<Vec<f64>>,
    pub globals: GlobalParams,
    pub iterations: usize,
    pub converged: bool,
    pub seconds: f64,
}

impl ReplicateOutcome {
    /// Prior mean of each indicator under the fitted beta-binomial prior.
    pub fn prior_inclusion(&self) -> f64 {
        self.globals.a1 / (self.globals.a1 + self.globals.b1)
    }
}

/// Fit seed of a replicate, derived from the cell seed.
pub fn replicate_seed(cell_seed: u64, replicate: usize) -> u64 {
    cell_seed.wrapping_add(0x9e37_79b9_7f4a_7c15u64.wrapping_mul(replicate as u64 + 1))
}

fn inclusion(windows: &[OccamWindow]) -> Vec<Vec<f64>> {
    windows.iter().map(OccamWindow::inclusion_probabilities).collect()
}

/// Generates and fits replicate `replicate` of `cell`. `clock` returns a
/// time in seconds and is only used for [`ReplicateOutcome::seconds`].
pub fn run_replicate(
    cell: &SimConfig,
    settings: &StudySettings,
    algorithm: Algorithm,
    replicate: usize,
    clock: &(dyn Fn() -> f64 + Sync),
) -> Result<ReplicateOutcome> {
    let sim = generate(cell, replicate)?;
    let mut cfg = settings.fit.clone();
    cfg.em.k = cell.k;
    cfg.em.seed = replicate_seed(cell.seed, replicate);
    let start = clock();
    let (windows, globals, iterations, converged) = match algorithm {
        Algorithm::NormalEm => {
            let st = em_fit(&sim.data, &cfg.em)?;
            (st.windows, st.globals, st.iteration, st.converged)
        }
        Algorithm::SkewtVb => {
            let st = vb_fit(&sim.data, &cfg)?;
            (st.windows, st.globals, st.iteration, st.converged)
        }
    };
    let seconds = clock() - start;
    Ok(ReplicateOutcome {
        replicate,
        truth: sim.truth.gamma,
        inclusion: inclusion(&windows),
        globals,
        iterations,
        converged,
        seconds,
    })
}

/// Aggregated metrics of one (cell, algorithm) pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellResult {
    pub config: SimConfig,
    pub algorithm: Algorithm,
    pub completed: usize,
    /// `(replicate, message)` for every failed replicate.
    pub failures: Vec<(usize, String)>,
    pub rmse_gamma: Option<f64>,
    pub rmse_c: Option<f64>,
    pub rmse_f: Option<f64>,
    pub mean_seconds: Option<f64>,
    pub c_estimates: Vec<f64>,
    pub f_estimates: Vec<f64>,
}

impl CellResult {
    pub fn partial(&self) -> bool {
        !self.failures.is_empty()
    }
}

/// Scores a set of outcomes of one cell; failed replicates are listed and
/// left out of the metrics.
pub fn summarize_cell(
    cell: &SimConfig,
    algorithm: Algorithm,
    outcomes: Vec<Result<ReplicateOutcome>>,
    metric_literal: bool,
) -> CellResult {
    let mut ok = Vec::new();
    let mut failures = Vec::new();
    for (r, o) in outcomes.into_iter().enumerate() {
        match o {
            Ok(o) => ok.push(o),
            Err(e) => failures.push((r, format!("{e}"))),
        }
    }
    let truth: Vec<_> = ok.iter().map(|o| o.truth.clone()).collect();
    let est: Vec<_> = ok.iter().map(|o| o.inclusion.clone()).collect();
    let rmse_gamma = if ok.is_empty() {
        None
    } else if metric_literal {
        rmse_gamma_literal(&truth, &est).ok()
    } else {
        rmse_gamma(&truth, &est).ok()
    };
    let c_estimates: Vec<f64> = ok.iter().map(|o| o.globals.c).collect();
    let f_estimates: Vec<f64> = ok.iter().map(|o| o.globals.f).collect();
    let skew = algorithm == Algorithm::SkewtVb && !ok.is_empty();
    CellResult {
        config: cell.clone(),
        algorithm,
        completed: ok.len(),
        failures,
        rmse_gamma,
        rmse_c: skew.then(|| rmse_scalar(cell.c, &c_estimates).ok()).flatten(),
        rmse_f: skew.then(|| rmse_scalar(cell.f, &f_estimates).ok()).flatten(),
        mean_seconds: (!ok.is_empty()).then(|| ok.iter().map(|o| o.seconds).sum::<f64>() / ok.len() as f64),
        c_estimates: if skew { c_estimates } else { Vec::new() },
        f_estimates: if skew { f_estimates } else { Vec::new() },
    }
}

/// Runs every replicate of every cell for each configured algorithm.
/// Replicates run in parallel; results are ordered by (cell, algorithm).
pub fn run_study(
    grid: &[SimConfig],
    settings: &StudySettings,
    clock: &(dyn Fn() -> f64 + Sync),
) -> Result<Vec<CellResult>> {
    if grid.is_empty() {
        return Err(Error::Config("the simulation grid is empty".into()));
    }
    if settings.algorithms.is_empty() {
        return Err(Error::Config("no algorithm selected".into()));
    }
    settings.fit.validate()?;
    for cell in grid {
        cell.validate()?;
    }
    let mut results = Vec::new();
    for cell in grid {
        for &algorithm in &settings.algorithms {
            let reps: Vec<usize> = (0..cell.replicates).collect();
            let outcomes = par::map(&reps, |_, &r| run_replicate(cell, settings, algorithm, r, clock));
            results.push(summarize_cell(cell, algorithm, outcomes, settings.metric_literal));
        }
    }
    Ok(results)
}

/// Cells over `q_prop ∈ {0.15, 0.3}` and `k ∈ {30, 100}` at the settings of
/// `base`.
pub fn symbol_grid(base: &SimConfig) -> Vec<SimConfig> {
    let mut out = Vec::new();
    for q_prop in [0.15, 0.3] {
        for k in [30, 100] {
            out.push(SimConfig { q_prop, k, ..base.clone() });
        }
    }
    out
}

/// The full factorial design: `p ∈ {10, 20}`, `h ∈ {0.1, 0.25}`,
/// `q_prop ∈ {0.15, 0.3}`, `c ∈ {0, 4}`, `f ∈ {5, 20}` and `k ∈ {30, 100}`.
pub fn full_grid(m: usize, replicates: usize, seed: u64) -> Vec<SimConfig> {
    let mut out = Vec::new();
    for c in [0.0, 4.0] {
        for f in [5.0, 20.0] {
            for p in [10, 20] {
                for h in [0.1, 0.25] {
                    let base = SimConfig {
                        m,
                        p,
                        h,
                        c,
                        f,
                        replicates,
                        seed,
                        ..SimConfig::default()
                    };
                    out.extend(symbol_grid(&base));
                }
            }
        }
    }
    out
}

fn opt(v: Option<f64>) -> String {
    v.map_or_else(|| "NA".into(), |x| format!("{x:.10e}"))
}

/// Tab-separated results table with one row per (cell, algorithm). The
/// timing column is included only when `with_timing` is set, so the table
/// without it is reproducible bit for bit.
pub fn results_table(results: &[CellResult], with_timing: bool) -> String {
    let mut out = String::from(
        "algorithm\tm\tp\th\tq_prop\tc\tf\tk\treplicates\tseed\tcompleted\tpartial\trmse_gamma\trmse_c\trmse_f",
    );
    if with_timing {
        out.push_str("\tmean_seconds");
    }
    out.push('\n');
    for r in results {
        let c = &r.config;
        out.push_str(&format!(
            "{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}",
            r.algorithm.name(),
            c.m,
            c.p,
            c.h,
            c.q_prop,
            c.c,
            c.f,
            c.k,
            c.replicates,
            c.seed,
            r.completed,
            r.partial(),
            opt(r.rmse_gamma),
            opt(r.rmse_c),
            opt(r.rmse_f),
        ));
        if with_timing {
            out.push('\t');
            out.push_str(&opt(r.mean_seconds));
        }
        out.push('\n');
    }
    out
}
