//! The expected complete-data log posterior and the window log evidence.

use crate::model::{log_prior_gamma, GlobalParams, SlabConvention};
use crate::normal_em::stats::{active_columns, Design, ModelFit};
use crate::par;
use crate::prelude::*;
use crate::special::ln_gamma;
use crate::window::OccamWindow;
use core::f64::consts::PI;
use nalgebra::DVector;

/// Log density of the hyperpriors: inverse-gamma(1, 1) on ψ and
/// `−½ ln v − ln(1 + v)` on the slab variance `v`. Flat priors on ζ*, a, b,
/// a1 and b1 contribute nothing.
pub fn log_hyperprior(psi: f64, slab_variance: f64) -> f64 {
    -2.0 * psi.ln() - 1.0 / psi - 0.5 * slab_variance.ln() - slab_variance.ln_1p()
}

/// `z_γ A` for one model: the fitted random-effect contribution at the
/// posterior mean.
pub(crate) fn random_fit(design: &Design, fit: &ModelFit) -> DVector<f64> {
    let mut out = DVector::zeros(design.n());
    for (slot, c) in active_columns(&fit.gamma).into_iter().enumerate() {
        out.axpy(fit.stats.a[slot], &design.z.column(c), 1.0);
    }
    out
}

/// Expected log prior of `(β, σ², γ)` for one model under `globals`.
pub(crate) fn prior_terms(fit: &ModelFit, globals: &GlobalParams, slab_variance: f64) -> f64 {
    let m = &fit.moments;
    let k = (fit.gamma.count() + 1) as f64;
    let p_gamma = fit.gamma.count() as f64;
    let ell = -m.e_neg_log_sig2;
    let beta = -0.5 * k * (2.0 * PI).ln() - 0.5 * globals.psi.ln() - 0.5 * p_gamma * slab_variance.ln() - 0.5 * k * ell
        - 0.5 * m.e_b1sq_over_sig2 / globals.psi
        - 0.5 * m.e_brest_sq_over_sig2 / slab_variance;
    let sigma = globals.a * globals.b.ln() - ln_gamma(globals.a) - (globals.a + 1.0) * ell - globals.b * m.e_inv_sig2;
    let gamma = log_prior_gamma(&fit.gamma, globals.a1, globals.b1).unwrap_or(f64::NEG_INFINITY);
    beta + sigma + gamma
}

/// `E[ln p(y | β, σ², ζ*)]` for one model with the responses of `design`.
pub(crate) fn likelihood_term(design: &Design, fit: &ModelFit, zeta: &[f64]) -> f64 {
    let n = design.n() as f64;
    let m = &fit.moments;
    let resid = design.residual(zeta) - random_fit(design, fit);
    -0.5 * n * (2.0 * PI).ln() + 0.5 * n * m.e_neg_log_sig2
        - 0.5 * (m.e_inv_sig2 * resid.norm_squared() + fit.stats.trace_gram_b())
}

/// Expected complete-data log posterior `Q(χ)` at new parameters `globals`,
/// with expectations taken from the window fits (computed at the previous
/// parameters). Only models with weight above `epsilon` enter the sum.
pub fn q_function(
    designs: &[Design],
    windows: &[OccamWindow],
    globals: &GlobalParams,
    slab: SlabConvention,
    epsilon: f64,
) -> f64 {
    let v = slab.slab_variance(globals.g2);
    let per_individual: Vec<f64> = designs
        .iter()
        .zip(windows)
        .map(|(d, win)| {
            win.fits()
                .iter()
                .zip(win.weights())
                .filter(|(_, &w)| w > epsilon)
                .map(|(fit, &w)| w * (likelihood_term(d, fit, &globals.zeta_star) + prior_terms(fit, globals, v)))
                .sum::<f64>()
        })
        .collect();
    par::tree_sum(&per_individual) + log_hyperprior(globals.psi, v)
}

/// `Σ_i ln Σ_k p(γ_k) m_i(γ_k) + ln p(χ)`: the log posterior of the
/// population parameters with each individual's model space restricted to
/// its window. Requires windows refreshed at `globals`.
pub fn log_evidence(windows: &[OccamWindow], globals: &GlobalParams, slab: SlabConvention) -> f64 {
    let per_individual: Vec<f64> = windows
        .iter()
        .map(|win| {
            let scores: Vec<f64> = win.fits().iter().map(|f| f.log_score()).collect();
            let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            max + scores.iter().map(|s| (s - max).exp()).sum::<f64>().ln()
        })
        .collect();
    par::tree_sum(&per_individual) + log_hyperprior(globals.psi, slab.slab_variance(globals.g2))
}
