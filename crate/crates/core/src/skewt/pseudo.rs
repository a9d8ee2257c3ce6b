//! Row reweighting that turns the skew-t update of `(β, σ², γ)` into a
//! normal-error problem.

use crate::error::{Error, Result};
use crate::normal_em::stats::Design;
use crate::prelude::*;
use crate::skewt::latent::LatentMoments;
use nalgebra::{DMatrix, DVector};

/// Pseudo-data for one individual.
#[derive(Debug, Clone)]
pub struct PseudoData {
    /// Reweighted designs and working response.
    pub design: Design,
    /// `γ`-independent part of the expected quadratic form, added to `C`.
    pub extra: f64,
}

/// With `w_j = √(E[ρ_j](1 + c²))`: rows of `X` and `[1 | S]` are scaled by
/// `w_j` and the working response is `w_j y_j − c E[ρ_j d_j] / √E[ρ_j]`.
///
/// The expected quadratic form of the skew-t likelihood then equals
/// `‖ỹ − X̃ζ* − Z̃β‖² + extra` with
/// `extra = Σ_j c²(E[ρd²] − E[ρd]²/E[ρ]) + E[ρd²]`.
pub fn pseudo_data(raw: &Design, c: f64, latents: &[LatentMoments]) -> Result<PseudoData> {
    let n = raw.n();
    if latents.len() != n {
        return Err(Error::Domain(format!(
            "individual {} has {n} observations but {} latent moments",
            raw.id,
            latents.len()
        )));
    }
    let s = 1.0 + c * c;
    let mut weights = Vec::with_capacity(n);
    let mut y = DVector::zeros(n);
    let mut extra = 0.0;
    for (j, m) in latents.iter().enumerate() {
        if !(m.e_rho > 0.0) {
            return Err(Error::Domain(format!(
                "individual {}, observation {j}: E[ρ] = {} is not positive",
                raw.id, m.e_rho
            )));
        }
        let w = (m.e_rho * s).sqrt();
        weights.push(w);
        y[j] = w * raw.y[j] - c * m.e_rho_d / m.e_rho.sqrt();
        extra += c * c * (m.e_rho_d2 - m.e_rho_d * m.e_rho_d / m.e_rho) + m.e_rho_d2;
    }
    let x = DMatrix::from_fn(n, raw.x.ncols(), |r, col| weights[r] * raw.x[(r, col)]);
    let z = DMatrix::from_fn(n, raw.z.ncols(), |r, col| weights[r] * raw.z[(r, col)]);
    Ok(PseudoData {
        design: Design::new(raw.id.clone(), y, x, z),
        extra,
    })
}
