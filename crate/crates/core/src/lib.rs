//! Bayesian per-individual variable selection in sparse linear mixed effects
//! models.
//!
//! Each individual `i` has a response `y_i`, a fixed-effect design `X_i`
//! (first column all ones) and a candidate random-effect design `S_i`. The
//! random effects actually used by an individual are selected by a binary
//! indicator `gamma_i` under a beta-binomial prior, and the posterior over
//! `gamma_i` is approximated by a small set of high-probability models (an
//! Occam's window) that is improved by a stochastic greedy search.
//!
//! Two fitting procedures are provided:
//!
//! * [`normal_em`]: an EM algorithm for MAP estimation of the population
//!   parameters under normal errors.
//! * [`skewt`]: a variational Bayes scheme for skew-t errors that reduces the
//!   individual-level updates to the normal machinery through a pseudo-data
//!   transform.
//!
//! The [`sim`] module generates synthetic longitudinal data and scores fits.
//!
//! The crate is `no_std` (with `alloc`). Enable the `parallel` feature to run
//! per-individual work on a rayon pool; results do not depend on the number of
//! worker threads because every reduction is performed in index order.

#![no_std]
#![forbid(unsafe_code)]

extern crate alloc;
#[cfg(feature = "std")]
extern crate std;

mod prelude {
    pub(crate) use alloc::{format, string::String, vec, vec::Vec};
    #[allow(unused_imports)]
    pub(crate) use num_traits::Float;
}

pub mod error;
pub mod model;
pub mod normal_em;
pub mod optim;
pub mod par;
pub mod rng;
pub mod sim;
pub mod skewt;
pub mod special;
pub mod window;

pub use error::{Error, Result};
pub use model::{
    log_prior_gamma, validate_dataset, ExponentConvention, GlobalParams, IndividualData,
    ModelIndicator, SlabConvention,
};
pub use normal_em::{em_fit, EmConfig, EmState};
pub use skewt::{vb_fit, VbConfig, VbState};
pub use window::OccamWindow;
