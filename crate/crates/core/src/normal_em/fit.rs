//! Initialization and the EM iteration loop.

use crate::error::{Error, Result};
use crate::model::{validate_dataset, GlobalParams, IndividualData, SlabConvention};
use crate::normal_em::mstep::{mstep_psi, mstep_zeta, solve_a1_b1, solve_ab, solve_g, WeightedSums};
use crate::normal_em::q::{log_evidence, q_function};
use crate::normal_em::stats::{Design, Evaluator};
use crate::normal_em::EmConfig;
use crate::par;
use crate::prelude::*;
use crate::rng::{stream, Purpose};
use crate::window::{allocate_updates, OccamWindow};
use core::f64::consts::PI;
use nalgebra::{Cholesky, DMatrix, DVector};
use serde::{Deserialize, Serialize};

/// One row of the iteration trace.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iteration: usize,
    /// Log posterior of the population parameters with windowed model spaces
    /// (its evidence lower bound for skew-t fits); non-decreasing under exact
    /// expectations.
    pub objective: f64,
    /// Expected complete-data log posterior at the new parameters (absent for
    /// the initial state).
    pub q: Option<f64>,
    /// Monte Carlo standard error of `q` (skew-t fits only).
    pub q_mc_se: Option<f64>,
    /// Latent draws per observation (skew-t fits only).
    pub draws: Option<usize>,
    pub globals: GlobalParams,
    /// Accepted window replacements during this iteration's search.
    pub replacements: usize,
    pub warnings: Vec<String>,
}

/// Final state of a fit.
#[derive(Debug, Clone)]
pub struct EmState {
    pub globals: GlobalParams,
    pub windows: Vec<OccamWindow>,
    /// Last evaluated expected complete-data log posterior.
    pub q_value: f64,
    pub objective: f64,
    pub iteration: usize,
    pub converged: bool,
    pub trace: Vec<IterationRecord>,
}

/// Per-individual constants of the model evaluator.
#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) struct EvalSpec {
    pub shape_increment: f64,
    pub extra: f64,
    pub log_const: f64,
}

impl EvalSpec {
    pub(crate) fn normal(design: &Design, cfg: &EmConfig) -> Self {
        Self {
            shape_increment: cfg.exponent_convention.shape_increment(design.n()),
            extra: 0.0,
            log_const: -0.5 * design.n() as f64 * (2.0 * PI).ln(),
        }
    }
}

pub(crate) fn evaluators<'a>(
    designs: &'a [Design],
    specs: &[EvalSpec],
    globals: &'a GlobalParams,
    slab: SlabConvention,
) -> Vec<Evaluator<'a>> {
    designs
        .iter()
        .zip(specs)
        .map(|(d, s)| Evaluator::new(d, globals, slab, s.shape_increment, s.extra, s.log_const))
        .collect()
}

pub(crate) fn initialize_windows(evals: &[Evaluator<'_>], cfg: &EmConfig) -> Result<Vec<OccamWindow>> {
    par::collect(par::map(evals, |_, e| OccamWindow::initialize(e, cfg.k, cfg.score_includes_prior)))
}

pub(crate) fn refresh_windows(evals: &[Evaluator<'_>], windows: &mut [OccamWindow]) -> Result<()> {
    par::collect(par::map_mut(windows, |i, w| w.refresh(&evals[i])))?;
    Ok(())
}

/// Runs `l` proposals spread over individuals; returns accepted replacements.
pub(crate) fn search_windows(
    evals: &[Evaluator<'_>],
    windows: &mut [OccamWindow],
    cfg: &EmConfig,
    iteration: usize,
) -> Result<usize> {
    if cfg.l == 0 || windows.is_empty() {
        return Ok(0);
    }
    let stale: Vec<u64> = windows.iter().map(|w| w.stale_count).collect();
    let mut alloc_rng = stream(cfg.seed, Purpose::Allocation, 0, iteration as u64);
    let budget = allocate_updates(&stale, cfg.l, &mut alloc_rng);
    let accepted = par::collect(par::map_mut(windows, |i, win| {
        let p = evals[i].p();
        if p < 64 && win.len() as u64 == 1u64 << p {
            win.stale_count += budget[i] as u64;
            return Ok(0usize);
        }
        let mut rng = stream(cfg.seed, Purpose::WindowSearch, i as u64, iteration as u64);
        let mut accepted = 0;
        for _ in 0..budget[i] {
            if win.propose_flip(&evals[i], &mut rng)? {
                accepted += 1;
            }
        }
        Ok(accepted)
    }))?;
    Ok(accepted.iter().sum())
}

/// Updates ζ*, ψ, (a, b), (a1, b1) and the slab scale from the current
/// window fits. The skew parameters are carried over unchanged.
pub(crate) fn mstep_globals(
    designs: &[Design],
    windows: &[OccamWindow],
    globals: &GlobalParams,
    cfg: &EmConfig,
    warnings: &mut Vec<String>,
) -> Result<GlobalParams> {
    let sums = WeightedSums::collect(windows, cfg.epsilon);
    let zeta_star = mstep_zeta(designs, windows, cfg.epsilon)?;
    let psi = mstep_psi(&sums);
    let (a, b) = solve_ab(&sums)?;
    let ab1 = solve_a1_b1(&sums.size_hist, (globals.a1, globals.b1));
    if ab1.at_bound {
        warnings.push(format!(
            "beta-binomial hyperparameters reached the search boundary (a1 = {:e}, b1 = {:e})",
            ab1.a1, ab1.b1
        ));
    }
    let g2 = match solve_g(&sums, globals.g2, cfg.slab_convention) {
        Some(g2) => g2,
        None => {
            warnings.push("no window model selects a random effect; slab scale left unchanged".into());
            globals.g2
        }
    };
    Ok(GlobalParams {
        zeta_star,
        psi,
        g2,
        a,
        b,
        a1: ab1.a1,
        b1: ab1.b1,
        c: globals.c,
        f: globals.f,
    })
}

fn solve_normal_equations(lhs: DMatrix<f64>, rhs: DVector<f64>) -> Option<DVector<f64>> {
    let chol = Cholesky::new(lhs)?;
    let sol = chol.solve(&rhs);
    sol.iter().all(|v| v.is_finite()).then_some(sol)
}

/// Fixed effects from a regression of the within-individual centered
/// response on the within-individual centered covariates, with the
/// intercept set to the overall mean of what remains. Falls back to pooled
/// least squares when the covariates have no within-individual variation.
fn initial_fixed_effects(data: &[IndividualData]) -> Result<Vec<f64>> {
    let q = data[0].q();
    let total_n: usize = data.iter().map(|d| d.n()).sum();
    if q > 1 {
        let k = q - 1;
        let mut lhs = DMatrix::<f64>::zeros(k, k);
        let mut rhs = DVector::<f64>::zeros(k);
        for ind in data {
            let n = ind.n() as f64;
            let xs = ind.x.columns(1, k);
            let means = DVector::from_fn(k, |c, _| xs.column(c).sum() / n);
            let ybar = ind.y.iter().sum::<f64>() / n;
            for r in 0..ind.n() {
                let xr = DVector::from_fn(k, |c, _| xs[(r, c)] - means[c]);
                lhs.ger(1.0, &xr, &xr, 1.0);
                rhs.axpy(ind.y[r] - ybar, &xr, 1.0);
            }
        }
        if let Some(slopes) = solve_normal_equations(lhs, rhs) {
            let mut resid_sum = 0.0;
            for ind in data {
                for r in 0..ind.n() {
                    let fit: f64 = (0..k).map(|c| ind.x[(r, c + 1)] * slopes[c]).sum();
                    resid_sum += ind.y[r] - fit;
                }
            }
            let mut zeta = vec![resid_sum / total_n as f64];
            zeta.extend(slopes.iter());
            return Ok(zeta);
        }
    }
    let mut lhs = DMatrix::<f64>::zeros(q, q);
    let mut rhs = DVector::<f64>::zeros(q);
    for ind in data {
        lhs += ind.x.tr_mul(&ind.x);
        rhs += ind.x.tr_mul(&DVector::from_column_slice(&ind.y));
    }
    solve_normal_equations(lhs, rhs)
        .map(|z| z.iter().copied().collect())
        .ok_or_else(|| Error::RankDeficient("pooled XᵀX is singular at initialization".into()))
}

/// Data-driven starting values: fixed effects from a within-individual
/// regression, `a = init_a`, `b = a σ̂²` with σ̂² the pooled
/// within-individual residual variance, and `ψ = v = a1 = b1 = 1`.
pub fn init_globals(data: &[IndividualData], init_a: f64, slab: SlabConvention) -> Result<GlobalParams> {
    validate_dataset(data)?;
    let zeta_star = initial_fixed_effects(data)?;
    let zeta = DVector::from_column_slice(&zeta_star);
    let mut within = 0.0;
    let mut all = Vec::new();
    for ind in data {
        let r = DVector::from_column_slice(&ind.y) - &ind.x * &zeta;
        let mean = r.mean();
        within += r.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>();
        all.extend(r.iter().copied());
    }
    let total_n = all.len();
    let mut sigma2 = if total_n > data.len() {
        within / (total_n - data.len()) as f64
    } else {
        0.0
    };
    if !(sigma2 > 0.0 && sigma2.is_finite()) {
        let mean = all.iter().sum::<f64>() / total_n as f64;
        sigma2 = all.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (total_n.max(2) - 1) as f64;
    }
    if !(sigma2 > 0.0 && sigma2.is_finite()) {
        sigma2 = 1.0;
    }
    Ok(GlobalParams {
        zeta_star,
        psi: 1.0,
        g2: slab.g2_from_variance(1.0),
        a: init_a,
        b: init_a * sigma2,
        a1: 1.0,
        b1: 1.0,
        c: 0.0,
        f: 10.0,
    })
}

pub fn em_fit(data: &[IndividualData], cfg: &EmConfig) -> Result<EmState> {
    em_fit_with_observer(data, cfg, &mut |_| {})
}

/// Runs the EM loop, calling `observer` after every iteration (and once for
/// the initial state).
///
/// Each iteration performs the M-step from the current window fits, refreshes
/// every window at the new parameters and then spends `cfg.l` search
/// proposals. Iteration stops once the relative change of the objective is
/// below `cfg.tol` for three consecutive iterations without any window
/// replacement, or after `cfg.max_iter` iterations.
pub fn em_fit_with_observer(
    data: &[IndividualData],
    cfg: &EmConfig,
    observer: &mut dyn FnMut(&IterationRecord),
) -> Result<EmState> {
    cfg.validate()?;
    validate_dataset(data)?;
    let designs: Vec<Design> = data.iter().map(Design::from_individual).collect();
    let specs: Vec<EvalSpec> = designs.iter().map(|d| EvalSpec::normal(d, cfg)).collect();
    let mut globals = match &cfg.initial_globals {
        Some(g) => g.clone(),
        None => init_globals(data, cfg.init_a, cfg.slab_convention)?,
    };
    let mut windows = initialize_windows(&evaluators(&designs, &specs, &globals, cfg.slab_convention), cfg)?;
    let mut objective = log_evidence(&windows, &globals, cfg.slab_convention);
    let initial = IterationRecord {
        iteration: 0,
        objective,
        q: None,
        q_mc_se: None,
        draws: None,
        globals: globals.clone(),
        replacements: 0,
        warnings: Vec::new(),
    };
    observer(&initial);
    let mut trace = vec![initial];
    let mut q_value = f64::NAN;
    let mut stable = 0;
    let mut converged = false;
    let mut iteration = 0;
    while iteration < cfg.max_iter {
        iteration += 1;
        let mut warnings = Vec::new();
        let next = mstep_globals(&designs, &windows, &globals, cfg, &mut warnings).map_err(|e| e.at_iteration(iteration))?;
        q_value = q_function(&designs, &windows, &next, cfg.slab_convention, cfg.epsilon);
        globals = next;
        let replacements = {
            let evals = evaluators(&designs, &specs, &globals, cfg.slab_convention);
            refresh_windows(&evals, &mut windows).map_err(|e| e.at_iteration(iteration))?;
            search_windows(&evals, &mut windows, cfg, iteration).map_err(|e| e.at_iteration(iteration))?
        };
        let previous = objective;
        objective = log_evidence(&windows, &globals, cfg.slab_convention);
        let record = IterationRecord {
            iteration,
            objective,
            q: Some(q_value),
            q_mc_se: None,
            draws: None,
            globals: globals.clone(),
            replacements,
            warnings,
        };
        observer(&record);
        trace.push(record);
        if !objective.is_finite() {
            return Err(Error::Numerical(format!("objective became {objective}")).at_iteration(iteration));
        }
        if (objective - previous).abs() < cfg.tol * objective.abs() && replacements == 0 {
            stable += 1;
        } else {
            stable = 0;
        }
        if stable >= 3 {
            converged = true;
            break;
        }
    }
    Ok(EmState {
        globals,
        windows,
        q_value,
        objective,
        iteration,
        converged,
        trace,
    })
}
