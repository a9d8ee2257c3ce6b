//! Updates of the skewness `c` and the degrees of freedom `f`.

use crate::optim::{maximize_on_interval, maximize_positive, Optimum};
#[allow(unused_imports)]
use crate::prelude::*;
use crate::special::ln_gamma;

/// Prior standard deviation of `c` in the expected log posterior.
pub const C_PRIOR_SD: f64 = 100.0;

/// Sums entering the `c` objective.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct SkewSums {
    /// `½ Σ_j E[ρ_j] Σ_k w E[e_j²/σ²]`.
    pub s1: f64,
    /// `½ Σ_j E[ρ_j d_j] Σ_k w E[e_j/σ²]`.
    pub s2: f64,
    /// `½ Σ_j E[ρ_j d_j²] Σ_k w E[1/σ²]`.
    pub s3: f64,
    /// `Σ_i n_i Σ_k w` (the observation count when nothing is truncated).
    pub n_obs: f64,
}

/// `−(1+c²) S1 + 2c√(1+c²) S2 − c² S3 + ½ ln(1+c²) N − c²/(2·100²)`.
pub fn c_objective(sums: &SkewSums, c: f64) -> f64 {
    let s = 1.0 + c * c;
    -s * sums.s1 + 2.0 * c * s.sqrt() * sums.s2 - c * c * sums.s3 + 0.5 * s.ln() * sums.n_obs
        - 0.5 * c * c / (C_PRIOR_SD * C_PRIOR_SD)
}

/// Maximizes [`c_objective`] over `[−50, 50]` from a grid plus the starts
/// `{previous, 0, ±1}`.
pub fn mstep_c(sums: &SkewSums, previous: f64) -> Optimum {
    maximize_on_interval(&|c| c_objective(sums, c), -50.0, 50.0, 201, &[previous, 0.0, 1.0, -1.0], 1e-10)
}

/// Sums entering the `f` objective.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct DofSums {
    pub n_obs: f64,
    /// `Σ_j E[ln ρ_j]`.
    pub log_rho: f64,
    /// `Σ_j E[ρ_j]`.
    pub rho: f64,
}

/// Expected log density of the `ρ` under `Gamma(f/2, f/2)` plus the
/// `Gamma(2, 0.1)` prior on `f`.
pub fn f_objective(sums: &DofSums, f: f64) -> f64 {
    let h = 0.5 * f;
    (h * h.ln() - ln_gamma(h)) * sums.n_obs + (h - 1.0) * sums.log_rho - h * sums.rho + f.ln() - 0.1 * f
}

/// Maximizes [`f_objective`] over `[0.5, 500]` on the log scale.
pub fn mstep_f(sums: &DofSums, previous: f64) -> Optimum {
    maximize_positive(&|f| f_objective(sums, f), 0.5, 500.0, previous, 1e-10)
}
