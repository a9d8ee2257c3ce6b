//! Per-model conjugate computations: sufficient statistics, the marginal
//! likelihood of a model indicator and posterior moments of (β, σ²).

use crate::error::{Error, Result};
use crate::model::{log_prior_gamma, ExponentConvention, GlobalParams, IndividualData, ModelIndicator, SlabConvention};
use crate::prelude::*;
use crate::special::{digamma, ln_gamma};
use core::f64::consts::PI;
use nalgebra::{Cholesky, DMatrix, DVector};

/// Response and designs for one individual, with the random-effect design
/// augmented by the individual intercept column.
///
/// Under skew-t errors this holds the pseudo-data instead of the raw data.
#[derive(Debug, Clone)]
pub struct Design {
    pub id: String,
    pub y: DVector<f64>,
    pub x: DMatrix<f64>,
    /// `n × (p + 1)`; column 0 is the individual intercept.
    pub z: DMatrix<f64>,
    gram: DMatrix<f64>,
}

impl Design {
    pub fn new(id: String, y: DVector<f64>, x: DMatrix<f64>, z: DMatrix<f64>) -> Self {
        let gram = z.tr_mul(&z);
        Self { id, y, x, z, gram }
    }

    pub fn from_individual(ind: &IndividualData) -> Self {
        Self::new(
            ind.id.clone(),
            DVector::from_column_slice(&ind.y),
            ind.x.clone(),
            ind.augmented_random_design(),
        )
    }

    pub fn n(&self) -> usize {
        self.y.len()
    }

    pub fn p(&self) -> usize {
        self.z.ncols() - 1
    }

    /// `zᵀz`.
    pub fn gram(&self) -> &DMatrix<f64> {
        &self.gram
    }

    /// `y - X ζ*`.
    pub fn residual(&self, zeta: &[f64]) -> DVector<f64> {
        &self.y - &self.x * DVector::from_column_slice(zeta)
    }
}

/// Columns of the augmented design used by a model: the intercept plus the
/// selected variables.
pub fn active_columns(gamma: &ModelIndicator) -> Vec<usize> {
    core::iter::once(0).chain(gamma.selected().map(|j| j + 1)).collect()
}

/// Conjugate quantities for one model.
#[derive(Debug, Clone)]
pub struct SufficientStats {
    /// Posterior mean of the active coefficients (intercept first).
    pub a: DVector<f64>,
    /// `(zᵀz + Λ)⁻¹` over the active coefficients.
    pub b: DMatrix<f64>,
    /// `rᵀ(I - z B zᵀ) r`.
    pub c: f64,
    /// `ln |B|`.
    pub log_det_b: f64,
    /// Diagonal of Λ.
    pub lambda: Vec<f64>,
}

impl SufficientStats {
    pub fn m_scalar(&self) -> f64 {
        self.a[0]
    }

    pub fn m_vec(&self) -> &[f64] {
        &self.a.as_slice()[1..]
    }

    pub fn q_scalar(&self) -> f64 {
        self.b[(0, 0)]
    }

    /// Trailing `p_γ × p_γ` block of B.
    pub fn q_mat(&self) -> DMatrix<f64> {
        let k = self.b.nrows();
        self.b.view((1, 1), (k - 1, k - 1)).into_owned()
    }

    /// `tr(zᵀz B) = k - tr(Λ B)`.
    pub fn trace_gram_b(&self) -> f64 {
        let k = self.lambda.len() as f64;
        k - self.lambda.iter().enumerate().map(|(j, l)| l * self.b[(j, j)]).sum::<f64>()
    }
}

/// Prior precision entries `(1/ψ, 1/v, ..., 1/v)` for the active coefficients.
pub fn prior_precision(gamma: &ModelIndicator, psi: f64, slab_variance: f64) -> Vec<f64> {
    let mut lambda = vec![1.0 / slab_variance; gamma.count() + 1];
    lambda[0] = 1.0 / psi;
    lambda
}

/// Sufficient statistics given the residual `r = y - Xζ*` and `u = zᵀ r`.
pub fn stats_from_residual(
    design: &Design,
    r: &DVector<f64>,
    u: &DVector<f64>,
    gamma: &ModelIndicator,
    psi: f64,
    slab_variance: f64,
) -> Result<SufficientStats> {
    let cols = active_columns(gamma);
    let k = cols.len();
    let lambda = prior_precision(gamma, psi, slab_variance);
    let gram = design.gram();
    let precision = DMatrix::from_fn(k, k, |i, j| {
        gram[(cols[i], cols[j])] + if i == j { lambda[i] } else { 0.0 }
    });
    let chol = Cholesky::new(precision).ok_or_else(|| Error::Factorization {
        individual: design.id.clone(),
        gamma: gamma.bitstring(),
        detail: "zᵀz + Λ is not positive definite".into(),
    })?;
    let u_act = DVector::from_iterator(k, cols.iter().map(|&c| u[c]));
    let a = chol.solve(&u_act);
    let log_det_b = -2.0 * chol.l_dirty().diagonal().iter().map(|d| d.ln()).sum::<f64>();
    let b = chol.inverse();
    // penalized residual sum of squares at the posterior mean; equals
    // rᵀr - uᵀ(zᵀz + Λ)⁻¹u but without the cancellation
    let mut fitted = DVector::zeros(design.n());
    for (slot, &c) in cols.iter().enumerate() {
        fitted.axpy(a[slot], &design.z.column(c), 1.0);
    }
    let resid_ss = (r - fitted).norm_squared();
    let penalty: f64 = a.iter().zip(&lambda).map(|(v, l)| l * v * v).sum();
    let c = resid_ss + penalty;
    if !c.is_finite() || !log_det_b.is_finite() {
        return Err(Error::Factorization {
            individual: design.id.clone(),
            gamma: gamma.bitstring(),
            detail: "non-finite statistics".into(),
        });
    }
    Ok(SufficientStats {
        a,
        b,
        c,
        log_det_b,
        lambda,
    })
}

/// Sufficient statistics of `gamma` for one individual under `globals`.
pub fn sufficient_stats(
    data: &IndividualData,
    gamma: &ModelIndicator,
    globals: &GlobalParams,
    slab: SlabConvention,
) -> Result<SufficientStats> {
    globals.validate()?;
    if gamma.p() != data.p() {
        return Err(Error::Domain(format!(
            "model has {} variables but individual {} has p = {}",
            gamma.p(),
            data.id,
            data.p()
        )));
    }
    let design = Design::from_individual(data);
    let r = design.residual(&globals.zeta_star);
    let u = design.z.tr_mul(&r);
    stats_from_residual(&design, &r, &u, gamma, globals.psi, slab.slab_variance(globals.g2))
}

/// Shape and rate of the inverse-gamma posterior of σ² for one model.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VarianceConjugate {
    pub shape: f64,
    pub rate: f64,
}

/// Posterior σ² shape/rate: `(a + shape_increment, b + (C + extra)/2)`.
pub fn variance_posterior(stats: &SufficientStats, shape_increment: f64, extra: f64, a: f64, b: f64) -> Result<VarianceConjugate> {
    let rate = b + 0.5 * (stats.c + extra);
    if !(rate > 0.0) {
        return Err(Error::Domain(format!("b + C/2 must be positive, got {rate}")));
    }
    Ok(VarianceConjugate {
        shape: a + shape_increment,
        rate,
    })
}

/// Log marginal likelihood of a model, up to the observation constant
/// `-(n/2) ln 2π`, which is included through `log_const`.
///
/// `ln m = -½ ln ψ - (p_γ/2) ln v + ½ ln|B| + a ln b - lnΓ(a) + lnΓ(α) - α ln(b + C/2)`.
pub fn log_marginal_from_stats(
    stats: &SufficientStats,
    post: VarianceConjugate,
    globals: &GlobalParams,
    slab_variance: f64,
    log_const: f64,
) -> f64 {
    let p_gamma = (stats.lambda.len() - 1) as f64;
    -0.5 * globals.psi.ln() - 0.5 * p_gamma * slab_variance.ln() + 0.5 * stats.log_det_b + globals.a * globals.b.ln()
        - ln_gamma(globals.a)
        + ln_gamma(post.shape)
        - post.shape * post.rate.ln()
        + log_const
}

/// Log marginal likelihood `ln m_i(γ)` of a model under normal errors.
pub fn log_marginal(
    data: &IndividualData,
    gamma: &ModelIndicator,
    globals: &GlobalParams,
    slab: SlabConvention,
    convention: ExponentConvention,
) -> Result<f64> {
    let stats = sufficient_stats(data, gamma, globals, slab)?;
    let post = variance_posterior(&stats, convention.shape_increment(data.n()), 0.0, globals.a, globals.b)?;
    Ok(log_marginal_from_stats(
        &stats,
        post,
        globals,
        slab.slab_variance(globals.g2),
        -0.5 * data.n() as f64 * (2.0 * PI).ln(),
    ))
}

/// Posterior expectations needed by the M-step.
#[derive(Debug, Clone, PartialEq)]
pub struct PosteriorMoments {
    /// `E[β/σ²]` over the active coefficients.
    pub e_beta_over_sig2: DVector<f64>,
    /// `E[β₁²/σ²]` (individual intercept).
    pub e_b1sq_over_sig2: f64,
    /// `E[Σ_{j≥2} β_j²/σ²]`.
    pub e_brest_sq_over_sig2: f64,
    /// `E[1/σ²]`.
    pub e_inv_sig2: f64,
    /// `E[-ln σ²]`.
    pub e_neg_log_sig2: f64,
}

pub fn moments_from(stats: &SufficientStats, post: VarianceConjugate) -> PosteriorMoments {
    let tau = post.shape / post.rate;
    let m = stats.m_scalar();
    let mv = stats.m_vec();
    let k = stats.b.nrows();
    let trace_q: f64 = (1..k).map(|j| stats.b[(j, j)]).sum();
    PosteriorMoments {
        e_beta_over_sig2: &stats.a * tau,
        e_b1sq_over_sig2: stats.q_scalar() + tau * m * m,
        e_brest_sq_over_sig2: trace_q + tau * mv.iter().map(|v| v * v).sum::<f64>(),
        e_inv_sig2: tau,
        e_neg_log_sig2: digamma(post.shape) - post.rate.ln(),
    }
}

/// Posterior moments for a model of an individual with `n` observations
/// under normal errors.
pub fn posterior_moments(
    stats: &SufficientStats,
    n: usize,
    globals: &GlobalParams,
    convention: ExponentConvention,
) -> Result<PosteriorMoments> {
    let post = variance_posterior(stats, convention.shape_increment(n), 0.0, globals.a, globals.b)?;
    Ok(moments_from(stats, post))
}

/// Everything cached for one model in a window.
#[derive(Debug, Clone)]
pub struct ModelFit {
    pub gamma: ModelIndicator,
    pub stats: SufficientStats,
    pub posterior: VarianceConjugate,
    pub moments: PosteriorMoments,
    pub log_marginal: f64,
    pub log_prior: f64,
}

impl ModelFit {
    pub fn log_score(&self) -> f64 {
        self.log_marginal + self.log_prior
    }

    /// Active coefficient vector scattered into the full `p + 1` layout.
    pub fn embed(&self, values: &DVector<f64>) -> DVector<f64> {
        let mut out = DVector::zeros(self.gamma.p() + 1);
        for (slot, c) in active_columns(&self.gamma).into_iter().enumerate() {
            out[c] = values[slot];
        }
        out
    }
}

/// Scores models for one individual at fixed population parameters.
#[derive(Debug, Clone)]
pub struct Evaluator<'a> {
    pub design: &'a Design,
    pub globals: &'a GlobalParams,
    pub slab_variance: f64,
    /// Added to `a` to form the σ² posterior shape.
    pub shape_increment: f64,
    /// γ-independent addition to C (skew-t latent terms; zero for normal errors).
    pub extra: f64,
    /// γ-independent constant included in the log marginal.
    pub log_const: f64,
    pub r: DVector<f64>,
    pub u: DVector<f64>,
}

impl<'a> Evaluator<'a> {
    pub fn normal(design: &'a Design, globals: &'a GlobalParams, slab: SlabConvention, convention: ExponentConvention) -> Self {
        Self::new(
            design,
            globals,
            slab,
            convention.shape_increment(design.n()),
            0.0,
            -0.5 * design.n() as f64 * (2.0 * PI).ln(),
        )
    }

    pub fn new(
        design: &'a Design,
        globals: &'a GlobalParams,
        slab: SlabConvention,
        shape_increment: f64,
        extra: f64,
        log_const: f64,
    ) -> Self {
        let r = design.residual(&globals.zeta_star);
        let u = design.z.tr_mul(&r);
        Self {
            design,
            globals,
            slab_variance: slab.slab_variance(globals.g2),
            shape_increment,
            extra,
            log_const,
            r,
            u,
        }
    }

    pub fn p(&self) -> usize {
        self.design.p()
    }

    pub fn fit(&self, gamma: &ModelIndicator) -> Result<ModelFit> {
        let stats = stats_from_residual(self.design, &self.r, &self.u, gamma, self.globals.psi, self.slab_variance)?;
        let posterior = variance_posterior(&stats, self.shape_increment, self.extra, self.globals.a, self.globals.b)?;
        let log_marginal = log_marginal_from_stats(&stats, posterior, self.globals, self.slab_variance, self.log_const);
        let log_prior = log_prior_gamma(gamma, self.globals.a1, self.globals.b1)?;
        let moments = moments_from(&stats, posterior);
        Ok(ModelFit {
            gamma: gamma.clone(),
            stats,
            posterior,
            moments,
            log_marginal,
            log_prior,
        })
    }
}
