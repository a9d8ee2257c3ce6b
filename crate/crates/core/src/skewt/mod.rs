//! Variational Bayes for skew-t errors.
//!
//! Each error is written as `c/√(1+c²) · d + ε` with `d` half-normal and `ε`
//! normal, both scaled by a gamma-distributed precision `ρ`. Given the
//! variational moments of `(ρ, d)`, the individual-level update is a normal
//! problem on reweighted pseudo-data, so the Occam's window machinery of
//! [`crate::normal_em`] applies unchanged.

pub mod fit;
pub mod latent;
pub mod mstep;
pub mod pseudo;

pub use fit::{vb_fit, vb_fit_with_observer, vb_q, VbState};
pub use latent::{
    residual_moments, sample_latents, trunc_t_params, LatentEstimate, LatentMoments, ResidualMoments, TruncTParams,
    TruncTSampler,
};
pub use mstep::{c_objective, f_objective, mstep_c, mstep_f, DofSums, SkewSums};
pub use pseudo::{pseudo_data, PseudoData};

use crate::error::{Error, Result};
use crate::normal_em::EmConfig;
use crate::prelude::*;
use serde::{Deserialize, Serialize};

/// Treatment of the latent variables.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LatentMode {
    /// Skew-t errors with Monte Carlo latent moments.
    #[default]
    Full,
    /// `ρ ≡ 1` and no skew component: the normal-error model, with `c` and
    /// `f` held fixed.
    NormalLimit,
}

/// Settings of the skew-t fit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct VbConfig {
    pub em: EmConfig,
    /// Latent draws per observation; doubled once near convergence.
    pub mc_draws: usize,
    pub latent_mode: LatentMode,
    pub estimate_c: bool,
    pub estimate_f: bool,
    /// Starting degrees of freedom.
    pub init_f: f64,
    /// Length of the moving average of Q used for the convergence test.
    pub smoothing_window: usize,
}

impl Default for VbConfig {
    fn default() -> Self {
        Self {
            em: EmConfig {
                tol: 1e-6,
                max_iter: 100,
                ..EmConfig::default()
            },
            mc_draws: 200,
            latent_mode: LatentMode::Full,
            estimate_c: true,
            estimate_f: true,
            init_f: 10.0,
            smoothing_window: 5,
        }
    }
}

impl VbConfig {
    pub fn validate(&self) -> Result<()> {
        self.em.validate()?;
        if self.mc_draws == 0 {
            return Err(Error::Config("mc_draws must be at least 1".into()));
        }
        if !(self.init_f > 0.0) {
            return Err(Error::Config(format!("init_f must be positive, got {}", self.init_f)));
        }
        if self.smoothing_window == 0 {
            return Err(Error::Config("smoothing_window must be at least 1".into()));
        }
        Ok(())
    }
}
