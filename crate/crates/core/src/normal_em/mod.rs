//! EM algorithm for the normal-error model.
//!
//! The E-step is exact within each individual's Occam's window: every model
//! in the window carries its conjugate posterior for `(β, σ²)` and a weight
//! proportional to prior × marginal likelihood. The M-step maximizes the
//! expected complete-data log posterior over the population parameters, one
//! separable block at a time.

pub mod fit;
pub mod mstep;
pub mod q;
pub mod stats;

pub use fit::{em_fit, em_fit_with_observer, init_globals, EmState, IterationRecord};
pub use mstep::{mstep_psi, mstep_zeta, solve_a1_b1, solve_ab, solve_g, WeightedSums};
pub use q::{log_evidence, log_hyperprior, q_function};
pub use stats::{
    log_marginal, posterior_moments, sufficient_stats, Design, Evaluator, ModelFit, PosteriorMoments,
    SufficientStats,
};

use crate::error::{Error, Result};
use crate::model::{ExponentConvention, GlobalParams, SlabConvention};
use crate::prelude::*;
use serde::{Deserialize, Serialize};

/// Settings shared by the normal EM and the skew-t VB fits.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EmConfig {
    /// Window size per individual.
    pub k: usize,
    /// Window-search updates per iteration, summed over individuals.
    pub l: usize,
    /// Models with weight at or below this are left out of M-step sums.
    pub epsilon: f64,
    /// Relative tolerance on the change of the objective.
    pub tol: f64,
    pub max_iter: usize,
    pub seed: u64,
    pub exponent_convention: ExponentConvention,
    pub slab_convention: SlabConvention,
    /// Compare search proposals by prior × marginal instead of marginal alone.
    pub score_includes_prior: bool,
    /// Starting inverse-gamma shape of σ².
    pub init_a: f64,
    /// Start from these parameters instead of the data-driven initialization.
    pub initial_globals: Option<GlobalParams>,
}

impl Default for EmConfig {
    fn default() -> Self {
        Self {
            k: 30,
            l: 100,
            epsilon: 1e-8,
            tol: 1e-8,
            max_iter: 200,
            seed: 0,
            exponent_convention: ExponentConvention::Conjugate,
            slab_convention: SlabConvention::Variance,
            score_includes_prior: true,
            init_a: 2.0,
            initial_globals: None,
        }
    }
}

impl EmConfig {
    pub fn validate(&self) -> Result<()> {
        if self.k == 0 {
            return Err(Error::Config("K must be at least 1".into()));
        }
        if !(0.0..1.0).contains(&self.epsilon) {
            return Err(Error::Config(format!("epsilon must lie in [0, 1), got {}", self.epsilon)));
        }
        if self.max_iter == 0 {
            return Err(Error::Config("max_iter must be at least 1".into()));
        }
        if !(self.tol >= 0.0) {
            return Err(Error::Config(format!("tol must be non-negative, got {}", self.tol)));
        }
        if !(self.init_a > 0.0) {
            return Err(Error::Config(format!("init_a must be positive, got {}", self.init_a)));
        }
        if let Some(g) = &self.initial_globals {
            g.validate()?;
        }
        Ok(())
    }
}
