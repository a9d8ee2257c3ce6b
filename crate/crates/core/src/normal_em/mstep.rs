//! Maximizers of the expected complete-data log posterior.
//!
//! Every sum runs over window models whose weight exceeds `epsilon`; the
//! per-individual partial sums are combined in index order so the result does
//! not depend on the worker count.

use crate::error::{Error, Result};
use crate::model::SlabConvention;
use crate::normal_em::stats::Design;
use crate::optim::{bisect, maximize_positive};
use crate::par;
use crate::prelude::*;
use crate::special::{digamma, ln_gamma};
use crate::window::OccamWindow;
use nalgebra::{Cholesky, DMatrix, DVector};

/// Weighted sums of posterior expectations over all `(i, k)` with `w > ε`.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightedSums {
    /// `Σ w` (equals the number of individuals when nothing is truncated).
    pub weight: f64,
    /// `Σ w E[1/σ²]`.
    pub inv_sig2: f64,
    /// `Σ w E[-ln σ²]`.
    pub neg_log_sig2: f64,
    /// `Σ w E[β₁²/σ²]`.
    pub b1sq: f64,
    /// `Σ w E[Σ_{j≥2} β_j²/σ²]`.
    pub brest_sq: f64,
    /// `Σ w p_γ`.
    pub size: f64,
    /// `size_hist[s] = Σ w` over models with `p_γ = s`.
    pub size_hist: Vec<f64>,
}

impl WeightedSums {
    pub fn collect(windows: &[OccamWindow], epsilon: f64) -> Self {
        let p = windows
            .first()
            .and_then(|w| w.fits().first())
            .map_or(0, |f| f.gamma.p());
        let rows: Vec<[f64; 6]> = windows
            .iter()
            .map(|win| {
                let mut acc = [0.0; 6];
                for (fit, &w) in win.fits().iter().zip(win.weights()) {
                    if w <= epsilon {
                        continue;
                    }
                    let m = &fit.moments;
                    acc[0] += w;
                    acc[1] += w * m.e_inv_sig2;
                    acc[2] += w * m.e_neg_log_sig2;
                    acc[3] += w * m.e_b1sq_over_sig2;
                    acc[4] += w * m.e_brest_sq_over_sig2;
                    acc[5] += w * fit.gamma.count() as f64;
                }
                acc
            })
            .collect();
        let column = |c: usize| par::tree_sum(&rows.iter().map(|r| r[c]).collect::<Vec<_>>());
        let mut hist_rows = vec![vec![0.0; windows.len()]; p + 1];
        for (i, win) in windows.iter().enumerate() {
            for (fit, &w) in win.fits().iter().zip(win.weights()) {
                if w > epsilon {
                    hist_rows[fit.gamma.count()][i] += w;
                }
            }
        }
        Self {
            weight: column(0),
            inv_sig2: column(1),
            neg_log_sig2: column(2),
            b1sq: column(3),
            brest_sq: column(4),
            size: column(5),
            size_hist: hist_rows.iter().map(|r| par::tree_sum(r)).collect(),
        }
    }
}

/// `ζ* = (Σ_i X_iᵀX_i τ̄_i)⁻¹ Σ_i X_iᵀ(τ̄_i y_i − z_i β̄_i)` with
/// `τ̄_i = Σ_k w E[1/σ²]` and `β̄_i = Σ_k w E[β/σ²]`.
pub fn mstep_zeta(designs: &[Design], windows: &[OccamWindow], epsilon: f64) -> Result<Vec<f64>> {
    let q = designs.first().ok_or(Error::NoIndividuals)?.x.ncols();
    let parts: Vec<(DMatrix<f64>, DVector<f64>)> = designs
        .iter()
        .zip(windows)
        .map(|(d, win)| {
            let mut tau = 0.0;
            let mut beta = DVector::zeros(d.p() + 1);
            for (fit, &w) in win.fits().iter().zip(win.weights()) {
                if w <= epsilon {
                    continue;
                }
                tau += w * fit.moments.e_inv_sig2;
                beta += fit.embed(&fit.moments.e_beta_over_sig2) * w;
            }
            let lhs = d.x.tr_mul(&d.x) * tau;
            let rhs = d.x.tr_mul(&(&d.y * tau - &d.z * beta));
            (lhs, rhs)
        })
        .collect();
    let lhs = DMatrix::from_fn(q, q, |r, c| {
        par::tree_sum(&parts.iter().map(|p| p.0[(r, c)]).collect::<Vec<_>>())
    });
    let rhs = DVector::from_fn(q, |r, _| par::tree_sum(&parts.iter().map(|p| p.1[r]).collect::<Vec<_>>()));
    let chol = Cholesky::new(lhs).ok_or_else(|| {
        Error::RankDeficient("Σ XᵀX E[1/σ²] is singular; check the fixed-effect design for collinear columns".into())
    })?;
    Ok(chol.solve(&rhs).iter().copied().collect())
}

/// `ψ = (Σ w E[β₁²/σ²] + 2) / (Σ w + 4)`.
pub fn mstep_psi(sums: &WeightedSums) -> f64 {
    (sums.b1sq + 2.0) / (sums.weight + 4.0)
}

/// Solves `digamma(a) = ln b + L̄` with `b = a W / T`, `L̄ = Σ w E[−ln σ²] / W`.
///
/// The root exists only when the weighted mean of `E[−ln σ²]` lies strictly
/// below `ln(T / W)`; otherwise `a` diverges and a solver error is returned.
pub fn solve_ab(sums: &WeightedSums) -> Result<(f64, f64)> {
    let (w, t) = (sums.weight, sums.inv_sig2);
    if !(w > 0.0 && t > 0.0) {
        return Err(Error::Solver(format!("need positive Σw and Σw E[1/σ²], got {w} and {t}")));
    }
    let kappa = (w / t).ln() + sums.neg_log_sig2 / w;
    let h = |log_a: f64| {
        let a = log_a.exp();
        digamma(a) - a.ln() - kappa
    };
    let log_a = bisect(&h, 1e-6f64.ln(), 1e6f64.ln()).map_err(|e| {
        Error::Solver(format!(
            "shape equation has no root in a ∈ [1e-6, 1e6] (ln(W/T) + L̄ = {kappa:e}; a diverges when this reaches 0): {e}"
        ))
    })?;
    let a = log_a.exp();
    Ok((a, a * w / t))
}

/// Result of the beta-binomial hyperparameter update.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BetaBinomialFit {
    pub a1: f64,
    pub b1: f64,
    /// Either parameter ended on the boundary of `[1e-4, 1e4]`.
    pub at_bound: bool,
}

const AB1_LO: f64 = 1e-4;
const AB1_HI: f64 = 1e4;

/// Expected beta-binomial log prior summed over windows, as a function of
/// `(a1, b1)`.
pub fn a1_b1_objective(size_hist: &[f64], a1: f64, b1: f64) -> f64 {
    let p = size_hist.len() - 1;
    let w: f64 = size_hist.iter().sum();
    let mut total = w * (ln_gamma(a1 + b1) - ln_gamma(p as f64 + a1 + b1) - ln_gamma(a1) - ln_gamma(b1));
    for (s, &h) in size_hist.iter().enumerate() {
        if h > 0.0 {
            total += h * (ln_gamma(s as f64 + a1) + ln_gamma((p - s) as f64 + b1));
        }
    }
    total
}

/// Coordinate ascent over `ln a1`, `ln b1` and a common log scale of both,
/// each by golden-section search, until neither parameter moves by more than
/// `1e-8` (relative) in a sweep.
pub fn solve_a1_b1(size_hist: &[f64], start: (f64, f64)) -> BetaBinomialFit {
    let clamp = |v: f64| v.clamp(AB1_LO, AB1_HI);
    let (mut a1, mut b1) = (clamp(start.0), clamp(start.1));
    let tol = 1e-10;
    for _ in 0..2_000 {
        let (a_prev, b_prev) = (a1, b1);
        a1 = maximize_positive(&|x| a1_b1_objective(size_hist, x, b1), AB1_LO, AB1_HI, a1, tol).x;
        b1 = maximize_positive(&|x| a1_b1_objective(size_hist, a1, x), AB1_LO, AB1_HI, b1, tol).x;
        // move along the ridge a1/b1 = const
        let lo = (AB1_LO / a1).max(AB1_LO / b1);
        let hi = (AB1_HI / a1).min(AB1_HI / b1);
        if hi > lo {
            let s = maximize_positive(&|s| a1_b1_objective(size_hist, s * a1, s * b1), lo, hi, 1.0, tol).x;
            if a1_b1_objective(size_hist, s * a1, s * b1) > a1_b1_objective(size_hist, a1, b1) {
                a1 = clamp(s * a1);
                b1 = clamp(s * b1);
            }
        }
        let change = ((a1 - a_prev) / a_prev).abs().max(((b1 - b_prev) / b_prev).abs());
        if change < 1e-8 {
            break;
        }
    }
    let near = |v: f64| v <= AB1_LO * (1.0 + 1e-6) || v >= AB1_HI * (1.0 - 1e-6);
    BetaBinomialFit {
        a1,
        b1,
        at_bound: near(a1) || near(b1),
    }
}

/// Terms of the expected log posterior that depend on the slab variance `v`:
/// `−(P/2) ln v − E_r/(2v) − ½ ln v − ln(1 + v)`.
pub fn slab_objective(size: f64, brest_sq: f64, v: f64) -> f64 {
    -0.5 * size * v.ln() - 0.5 * brest_sq / v - 0.5 * v.ln() - v.ln_1p()
}

/// Slab update. Returns `None` when no window model has a selected effect,
/// in which case the slab scale is not identified.
pub fn solve_g(sums: &WeightedSums, previous_g2: f64, slab: SlabConvention) -> Option<f64> {
    if !(sums.size > 0.0) {
        return None;
    }
    let start = slab.slab_variance(previous_g2);
    let opt = maximize_positive(&|v| slab_objective(sums.size, sums.brest_sq, v), 1e-10, 1e10, start, 1e-10);
    Some(slab.g2_from_variance(opt.x))
}
