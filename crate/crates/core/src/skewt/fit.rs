//! The three-block variational iteration.

use crate::error::{Error, Result};
use crate::model::{validate_dataset, GlobalParams, IndividualData};
use crate::normal_em::fit::{
    evaluators, init_globals, initialize_windows, mstep_globals, refresh_windows, search_windows, EvalSpec,
    IterationRecord,
};
use crate::normal_em::q::{log_evidence, log_hyperprior, prior_terms};
use crate::normal_em::stats::Design;
use crate::par;
use crate::prelude::*;
use crate::rng::{stream, Purpose};
use crate::skewt::latent::{residual_moments, sample_latents, trunc_t_params, LatentEstimate, ResidualMoments};
use crate::skewt::mstep::{mstep_c, mstep_f, DofSums, SkewSums, C_PRIOR_SD};
use crate::skewt::pseudo::pseudo_data;
use crate::skewt::{LatentMode, VbConfig};
use crate::special::ln_gamma;
use crate::window::OccamWindow;
use core::f64::consts::PI;
use nalgebra::DVector;

/// Final state of a skew-t fit.
#[derive(Debug, Clone)]
pub struct VbState {
    pub globals: GlobalParams,
    pub windows: Vec<OccamWindow>,
    /// Latent moments per individual and observation.
    pub latents: Vec<Vec<LatentEstimate>>,
    /// Last expected complete-data log posterior.
    pub q_value: f64,
    /// Last evidence lower bound.
    pub objective: f64,
    pub iteration: usize,
    pub converged: bool,
    /// Latent draws per observation at the end of the run.
    pub draws: usize,
    pub trace: Vec<IterationRecord>,
}

/// Pseudo-designs and evaluator constants for the current latents and `c`.
fn build_pseudo(
    raw: &[Design],
    latents: &[Vec<LatentEstimate>],
    c: f64,
    cfg: &VbConfig,
) -> Result<(Vec<Design>, Vec<EvalSpec>)> {
    let built = par::collect(par::map(raw, |i, d| {
        let moments: Vec<_> = latents[i].iter().map(|l| l.moments).collect();
        let pseudo = pseudo_data(d, c, &moments)?;
        let n = d.n() as f64;
        let spec = match cfg.latent_mode {
            LatentMode::NormalLimit => EvalSpec::normal(d, &cfg.em),
            LatentMode::Full => {
                let sum_log_rho: f64 = moments.iter().map(|m| m.e_log_rho).sum();
                EvalSpec {
                    shape_increment: cfg.em.exponent_convention.shape_increment(d.n()) + 0.5 * n,
                    extra: pseudo.extra,
                    log_const: n * (-0.5 * (2.0 * PI).ln() + 0.5 * (1.0 + c * c).ln() + 0.5 * (2.0 / PI).ln())
                        + sum_log_rho,
                }
            }
        };
        Ok((pseudo.design, spec))
    }))?;
    Ok(built.into_iter().unzip())
}

fn all_residual_moments(
    raw: &[Design],
    windows: &[OccamWindow],
    zeta: &[f64],
    epsilon: f64,
) -> Vec<ResidualMoments> {
    raw.iter()
        .zip(windows)
        .map(|(d, w)| residual_moments(d, w, zeta, epsilon))
        .collect()
}

fn skew_sums(raw: &[Design], resid: &[ResidualMoments], latents: &[Vec<LatentEstimate>]) -> SkewSums {
    let rows: Vec<[f64; 4]> = resid
        .iter()
        .zip(latents)
        .zip(raw)
        .map(|((r, lat), d)| {
            let mut acc = [0.0; 4];
            for (j, l) in lat.iter().enumerate() {
                let m = l.moments;
                acc[0] += 0.5 * m.e_rho * r.second[j];
                acc[1] += 0.5 * m.e_rho_d * r.first[j];
                acc[2] += 0.5 * m.e_rho_d2 * r.tau;
            }
            acc[3] = d.n() as f64 * r.weight;
            acc
        })
        .collect();
    let col = |k: usize| par::tree_sum(&rows.iter().map(|r| r[k]).collect::<Vec<_>>());
    SkewSums {
        s1: col(0),
        s2: col(1),
        s3: col(2),
        n_obs: col(3),
    }
}

fn dof_sums(latents: &[Vec<LatentEstimate>]) -> DofSums {
    let rows: Vec<[f64; 3]> = latents
        .iter()
        .map(|lat| {
            let mut acc = [lat.len() as f64, 0.0, 0.0];
            for l in lat {
                acc[1] += l.moments.e_log_rho;
                acc[2] += l.moments.e_rho;
            }
            acc
        })
        .collect();
    let col = |k: usize| par::tree_sum(&rows.iter().map(|r| r[k]).collect::<Vec<_>>());
    DofSums {
        n_obs: col(0),
        log_rho: col(1),
        rho: col(2),
    }
}

/// Expected complete-data log posterior of the skew-t model at `globals`,
/// with `(β, σ², γ)` expectations from the window fits and `(ρ, d)`
/// expectations from `latents`. `resid` must hold the residual moments at
/// `globals.zeta_star`.
///
/// Returns the value and its Monte Carlo standard error.
pub fn vb_q(
    raw: &[Design],
    windows: &[OccamWindow],
    latents: &[Vec<LatentEstimate>],
    resid: &[ResidualMoments],
    globals: &GlobalParams,
    cfg: &VbConfig,
) -> (f64, f64) {
    let v = cfg.em.slab_convention.slab_variance(globals.g2);
    let c = globals.c;
    let s = 1.0 + c * c;
    let h = 0.5 * globals.f;
    let rho_const = h * h.ln() - ln_gamma(h);
    let full = cfg.latent_mode == LatentMode::Full;
    let per_individual: Vec<(f64, f64)> = (0..raw.len())
        .map(|i| {
            let (r, lat, n) = (&resid[i], &latents[i], raw[i].n() as f64);
            let mut value: f64 = windows[i]
                .fits()
                .iter()
                .zip(windows[i].weights())
                .filter(|(_, &w)| w > cfg.em.epsilon)
                .map(|(fit, &w)| w * prior_terms(fit, globals, v))
                .sum();
            let mut var = 0.0;
            if full {
                value += r.weight * n * (-0.5 * (2.0 * PI).ln() + 0.5 * s.ln() + 0.5 * (2.0 / PI).ln())
                    + n * r.neg_log_sig2;
                for (j, l) in lat.iter().enumerate() {
                    let m = l.moments;
                    let coef = [
                        -0.5 * s * r.second[j] - h,
                        c * s.sqrt() * r.first[j],
                        -0.5 * s * r.tau,
                        r.weight + h - 1.0,
                    ];
                    value += coef[0] * m.e_rho + coef[1] * m.e_rho_d + coef[2] * m.e_rho_d2 + coef[3] * m.e_log_rho
                        + rho_const;
                    for a in 0..4 {
                        for b in 0..4 {
                            var += coef[a] * l.covariance[a][b] * coef[b];
                        }
                    }
                }
            } else {
                value += r.weight * n * (-0.5 * (2.0 * PI).ln()) + 0.5 * n * r.neg_log_sig2
                    - 0.5 * r.second.iter().sum::<f64>();
            }
            (value, var)
        })
        .collect();
    let mut total = par::tree_sum(&per_individual.iter().map(|p| p.0).collect::<Vec<_>>())
        + log_hyperprior(globals.psi, v);
    if full {
        total += -0.5 * c * c / (C_PRIOR_SD * C_PRIOR_SD) + globals.f.ln() - 0.1 * globals.f;
    }
    let var = par::tree_sum(&per_individual.iter().map(|p| p.1).collect::<Vec<_>>());
    (total, var.sqrt())
}

/// Evidence lower bound of the skew-t model with window-restricted model
/// spaces. Requires windows refreshed at `globals` on the pseudo-data of
/// `latents`.
pub fn vb_objective(
    windows: &[OccamWindow],
    latents: &[Vec<LatentEstimate>],
    globals: &GlobalParams,
    cfg: &VbConfig,
) -> f64 {
    let evidence = log_evidence(windows, globals, cfg.em.slab_convention);
    if cfg.latent_mode == LatentMode::NormalLimit {
        return evidence;
    }
    let h = 0.5 * globals.f;
    let rho_const = h * h.ln() - ln_gamma(h);
    let latent_terms: Vec<f64> = latents
        .iter()
        .map(|lat| {
            lat.iter()
                .map(|l| {
                    let m = l.moments;
                    rho_const + (h - 1.0) * m.e_log_rho - h * m.e_rho + l.entropy
                })
                .sum()
        })
        .collect();
    evidence + par::tree_sum(&latent_terms) - 0.5 * globals.c * globals.c / (C_PRIOR_SD * C_PRIOR_SD)
        + globals.f.ln()
        - 0.1 * globals.f
}

/// Skewness parameter whose skew-normal error has sample skewness `g1`
/// (clipped to the attainable range).
fn c_from_skewness(g1: f64) -> f64 {
    let g = g1.clamp(-0.99, 0.99);
    let k = 0.5 * (4.0 - PI);
    let a = g.abs().powf(2.0 / 3.0);
    let delta = (0.5 * PI * a / (a + k.powf(2.0 / 3.0))).sqrt().min(0.999).copysign(g);
    delta / (1.0 - delta * delta).sqrt()
}

/// Sample skewness of the residuals after the fixed effects and the
/// model-averaged random effects.
fn residual_skewness(raw: &[Design], windows: &[OccamWindow], zeta: &[f64]) -> f64 {
    let mut resid = Vec::new();
    for (d, w) in raw.iter().zip(windows) {
        let beta = DVector::from_vec(w.averaged_coefficients());
        resid.extend((d.residual(zeta) - &d.z * beta).iter().copied());
    }
    let mean = resid.iter().sum::<f64>() / resid.len() as f64;
    for r in &mut resid {
        *r -= mean;
    }
    let n = resid.len() as f64;
    let m2 = resid.iter().map(|v| v * v).sum::<f64>() / n;
    let m3 = resid.iter().map(|v| v * v * v).sum::<f64>() / n;
    if m2 > 0.0 {
        m3 / m2.powf(1.5)
    } else {
        0.0
    }
}

fn update_latents(
    raw: &[Design],
    windows: &[OccamWindow],
    globals: &GlobalParams,
    cfg: &VbConfig,
    draws: usize,
    iteration: usize,
) -> Result<Vec<Vec<LatentEstimate>>> {
    par::collect(par::map(raw, |i, d| {
        let r = residual_moments(d, &windows[i], &globals.zeta_star, cfg.em.epsilon);
        let mut rng = stream(cfg.em.seed, Purpose::Latent, i as u64, iteration as u64);
        (0..d.n())
            .map(|j| {
                let params = trunc_t_params(r.tau, r.first[j], r.second[j], globals.c, globals.f)?;
                sample_latents(&params, draws, &mut rng)
            })
            .collect::<Result<Vec<_>>>()
    }))
}

pub fn vb_fit(data: &[IndividualData], cfg: &VbConfig) -> Result<VbState> {
    vb_fit_with_observer(data, cfg, &mut |_| {})
}

/// Runs the variational iteration: (1) update the population parameters,
/// including `c` and `f`; (2) redraw the latent moments; (3) search the
/// windows on the resulting pseudo-data.
///
/// Convergence is declared when the relative change of the moving average
/// of the evidence lower bound falls below `tol` at least `smoothing_window` iterations after the
/// draw count has been doubled (which happens once the change first falls
/// below `10 · tol`).
pub fn vb_fit_with_observer(
    data: &[IndividualData],
    cfg: &VbConfig,
    observer: &mut dyn FnMut(&IterationRecord),
) -> Result<VbState> {
    cfg.validate()?;
    validate_dataset(data)?;
    let em = &cfg.em;
    let full = cfg.latent_mode == LatentMode::Full;
    let raw: Vec<Design> = data.iter().map(Design::from_individual).collect();
    let mut globals = match &em.initial_globals {
        Some(g) => g.clone(),
        None => {
            let mut g = init_globals(data, em.init_a, em.slab_convention)?;
            g.f = cfg.init_f;
            g
        }
    };
    let derive_c = em.initial_globals.is_none() && full && cfg.estimate_c;
    if !full {
        globals.c = 0.0;
    }
    let mut draws = cfg.mc_draws;
    let mut latents: Vec<Vec<LatentEstimate>> = raw
        .iter()
        .map(|d| vec![LatentEstimate::exact(crate::skewt::LatentMoments::DEGENERATE); d.n()])
        .collect();
    let (mut pseudo, mut specs) = build_pseudo(&raw, &latents, globals.c, cfg)?;
    let mut windows = initialize_windows(&evaluators(&pseudo, &specs, &globals, em.slab_convention), em)?;
    if derive_c {
        globals.c = c_from_skewness(residual_skewness(&raw, &windows, &globals.zeta_star));
    }
    if full {
        latents = update_latents(&raw, &windows, &globals, cfg, draws, 0)?;
        (pseudo, specs) = build_pseudo(&raw, &latents, globals.c, cfg)?;
        refresh_windows(&evaluators(&pseudo, &specs, &globals, em.slab_convention), &mut windows)?;
    }
    let resid = all_residual_moments(&raw, &windows, &globals.zeta_star, em.epsilon);
    let (q0, se0) = vb_q(&raw, &windows, &latents, &resid, &globals, cfg);
    let initial = IterationRecord {
        iteration: 0,
        objective: vb_objective(&windows, &latents, &globals, cfg),
        q: Some(q0),
        q_mc_se: full.then_some(se0),
        draws: full.then_some(draws),
        globals: globals.clone(),
        replacements: 0,
        warnings: Vec::new(),
    };
    observer(&initial);
    let mut history: Vec<f64> = vec![initial.objective];
    let mut trace = vec![initial];
    let mut q_value = q0;
    let mut doubled_at: Option<usize> = None;
    let mut converged = false;
    let mut iteration = 0;
    while iteration < em.max_iter {
        iteration += 1;
        let it = iteration;
        let ctx = |e: Error| e.at_iteration(it);
        let mut warnings = Vec::new();
        let mut next = mstep_globals(&pseudo, &windows, &globals, em, &mut warnings).map_err(ctx)?;
        let resid = all_residual_moments(&raw, &windows, &next.zeta_star, em.epsilon);
        if full {
            if cfg.estimate_c {
                let opt = mstep_c(&skew_sums(&raw, &resid, &latents), globals.c);
                if opt.at_lower_bound || opt.at_upper_bound {
                    warnings.push(format!("skewness reached the search boundary (c = {})", opt.x));
                }
                next.c = opt.x;
            }
            if cfg.estimate_f {
                let opt = mstep_f(&dof_sums(&latents), globals.f);
                if opt.at_lower_bound || opt.at_upper_bound {
                    warnings.push(format!("degrees of freedom reached the search boundary (f = {})", opt.x));
                }
                next.f = opt.x;
            }
        }
        let (q, q_se) = vb_q(&raw, &windows, &latents, &resid, &next, cfg);
        q_value = q;
        globals = next;

        (pseudo, specs) = build_pseudo(&raw, &latents, globals.c, cfg).map_err(ctx)?;
        refresh_windows(&evaluators(&pseudo, &specs, &globals, em.slab_convention), &mut windows).map_err(ctx)?;
        if full {
            latents = update_latents(&raw, &windows, &globals, cfg, draws, iteration).map_err(ctx)?;
            (pseudo, specs) = build_pseudo(&raw, &latents, globals.c, cfg).map_err(ctx)?;
            refresh_windows(&evaluators(&pseudo, &specs, &globals, em.slab_convention), &mut windows)
                .map_err(ctx)?;
        }
        let replacements = search_windows(
            &evaluators(&pseudo, &specs, &globals, em.slab_convention),
            &mut windows,
            em,
            iteration,
        )
        .map_err(ctx)?;

        let objective = vb_objective(&windows, &latents, &globals, cfg);
        let record = IterationRecord {
            iteration,
            objective,
            q: Some(q),
            q_mc_se: full.then_some(q_se),
            draws: full.then_some(draws),
            globals: globals.clone(),
            replacements,
            warnings,
        };
        observer(&record);
        trace.push(record);
        if !objective.is_finite() {
            return Err(Error::Numerical(format!("objective became {objective}")).at_iteration(iteration));
        }
        history.push(objective);

        let w = cfg.smoothing_window;
        if history.len() > w {
            let len = history.len();
            let now = history[len - w..].iter().sum::<f64>() / w as f64;
            let before = history[len - w - 1..len - 1].iter().sum::<f64>() / w as f64;
            let rel = (now - before).abs() / now.abs().max(f64::MIN_POSITIVE);
            match doubled_at {
                None if rel < 10.0 * em.tol => {
                    if full {
                        draws *= 2;
                    }
                    doubled_at = Some(iteration);
                }
                Some(at) if iteration >= at + w && rel < em.tol => {
                    converged = true;
                    break;
                }
                _ => {}
            }
        }
    }
    Ok(VbState {
        globals,
        windows,
        latents,
        q_value,
        objective: *history.last().expect("initial objective"),
        iteration,
        converged,
        draws,
        trace,
    })
}
