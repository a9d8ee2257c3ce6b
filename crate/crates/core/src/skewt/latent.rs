//! Variational distribution of the skew-t latents `(ρ, d)` of one
//! observation and its Monte Carlo moments.
//!
//! Given the window fits, `q(d)` is a Student-t restricted to `d > 0` and
//! `q(ρ | d)` is a gamma distribution, so each draw of `d` contributes the
//! exact conditional expectations over `ρ`.

use crate::error::{Error, Result};
use crate::normal_em::stats::{active_columns, Design};
use crate::prelude::*;
use crate::special::{digamma, ln_gamma, student_t_cdf, student_t_quantile};
use core::f64::consts::PI;
use crate::window::OccamWindow;
use rand::Rng;
use rand_distr::{Distribution, StudentT};
use serde::{Deserialize, Serialize};

/// `E[ρ]`, `E[ρd]`, `E[ρd²]` and `E[ln ρ]` for one observation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LatentMoments {
    pub e_rho: f64,
    pub e_rho_d: f64,
    pub e_rho_d2: f64,
    pub e_log_rho: f64,
}

impl LatentMoments {
    /// `ρ ≡ 1`, `d ≡ 0`: the normal-error limit.
    pub const DEGENERATE: Self = Self {
        e_rho: 1.0,
        e_rho_d: 0.0,
        e_rho_d2: 0.0,
        e_log_rho: 0.0,
    };

    pub fn as_array(&self) -> [f64; 4] {
        [self.e_rho, self.e_rho_d, self.e_rho_d2, self.e_log_rho]
    }

    fn from_array(v: [f64; 4]) -> Self {
        Self {
            e_rho: v[0],
            e_rho_d: v[1],
            e_rho_d2: v[2],
            e_log_rho: v[3],
        }
    }
}

/// Monte Carlo estimate of [`LatentMoments`] with the covariance matrix of the
/// four sample means.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LatentEstimate {
    pub moments: LatentMoments,
    pub covariance: [[f64; 4]; 4],
    /// Monte Carlo estimate of the entropy of `q(d, ρ)`; zero for exact
    /// (degenerate) moments.
    pub entropy: f64,
}

impl LatentEstimate {
    pub fn exact(moments: LatentMoments) -> Self {
        Self {
            moments,
            covariance: [[0.0; 4]; 4],
            entropy: 0.0,
        }
    }

    pub fn std_errors(&self) -> [f64; 4] {
        core::array::from_fn(|k| self.covariance[k][k].sqrt())
    }
}

/// Parameters of `q(d) ∝ 1{d > 0} (1 + (d − μ)² / (dof · ν))^{−(dof + 1)/2}`
/// and of `q(ρ | d) = Gamma((dof + 1)/2, (λ/2)(1 + (d − μ)²/(dof · ν)))`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TruncTParams {
    /// Location of the untruncated t.
    pub mu: f64,
    /// Squared scale of the untruncated t.
    pub nu: f64,
    /// Degrees of freedom, `f + 1`.
    pub dof: f64,
    /// Rate scale of `q(ρ | d)` at `d = μ` (times two).
    pub lambda: f64,
}

impl TruncTParams {
    pub fn scale(&self) -> f64 {
        self.nu.sqrt()
    }

    /// Shape of `q(ρ | d)`.
    pub fn rho_shape(&self) -> f64 {
        0.5 * (self.dof + 1.0)
    }

    /// Rate of `q(ρ | d)`.
    pub fn rho_rate(&self, d: f64) -> f64 {
        let z = d - self.mu;
        0.5 * self.lambda * (1.0 + z * z / (self.dof * self.nu))
    }
}

/// Window-averaged expectations of the raw residual `e_j = y_j − X_jζ* − z_jβ`
/// for one individual.
#[derive(Debug, Clone, PartialEq)]
pub struct ResidualMoments {
    /// `Σ_k w` over the included models.
    pub weight: f64,
    /// `Σ_k w E[1/σ²]`.
    pub tau: f64,
    /// `Σ_k w E[−ln σ²]`.
    pub neg_log_sig2: f64,
    /// `Σ_k w E[e_j/σ²]` per observation.
    pub first: Vec<f64>,
    /// `Σ_k w E[e_j²/σ²]` per observation.
    pub second: Vec<f64>,
}

/// Residual expectations under the window fits, on the untransformed data of
/// `raw` and at fixed effects `zeta`. Models with weight at or below
/// `epsilon` are skipped.
pub fn residual_moments(raw: &Design, window: &OccamWindow, zeta: &[f64], epsilon: f64) -> ResidualMoments {
    let n = raw.n();
    let r = raw.residual(zeta);
    let mut out = ResidualMoments {
        weight: 0.0,
        tau: 0.0,
        neg_log_sig2: 0.0,
        first: vec![0.0; n],
        second: vec![0.0; n],
    };
    for (fit, &w) in window.fits().iter().zip(window.weights()) {
        if w <= epsilon {
            continue;
        }
        let tau = fit.moments.e_inv_sig2;
        out.weight += w;
        out.tau += w * tau;
        out.neg_log_sig2 += w * fit.moments.e_neg_log_sig2;
        let cols = active_columns(&fit.gamma);
        let b = &fit.stats.b;
        for j in 0..n {
            let zj: Vec<f64> = cols.iter().map(|&c| raw.z[(j, c)]).collect();
            let mean: f64 = zj.iter().zip(fit.stats.a.iter()).map(|(z, a)| z * a).sum();
            let mut quad = 0.0;
            for (s, zs) in zj.iter().enumerate() {
                for (t, zt) in zj.iter().enumerate() {
                    quad += zs * b[(s, t)] * zt;
                }
            }
            let e = r[j] - mean;
            out.first[j] += w * tau * e;
            out.second[j] += w * (tau * e * e + quad);
        }
    }
    out
}

/// Parameters of `q(d_j)` from the window-averaged residual expectations
/// `tau = Σ w E[1/σ²]`, `first = Σ w E[e_j/σ²]`, `second = Σ w E[e_j²/σ²]`.
///
/// With `s = 1 + c²`: `μ = c√s · first / (s · tau)`,
/// `λ = f + s · second − s · tau · μ²` and `ν = λ / (s · tau · (f + 1))`.
pub fn trunc_t_params(tau: f64, first: f64, second: f64, c: f64, f: f64) -> Result<TruncTParams> {
    let s = 1.0 + c * c;
    if !(tau > 0.0) || !first.is_finite() || !second.is_finite() {
        return Err(Error::Numerical(format!(
            "invalid residual expectations (E[1/σ²] = {tau}, E[e/σ²] = {first}, E[e²/σ²] = {second})"
        )));
    }
    let mu = c * s.sqrt() * first / (s * tau);
    // second ≥ first²/tau by Cauchy–Schwarz, so λ ≥ f up to rounding
    let lambda = (f + s * second - s * tau * mu * mu).max(f);
    let dof = f + 1.0;
    let nu = lambda / (s * tau * dof);
    if !(nu > 0.0 && nu.is_finite()) {
        return Err(Error::Numerical(format!("latent scale ν = {nu} is not positive")));
    }
    Ok(TruncTParams { mu, nu, dof, lambda })
}

/// Exact sampler for `μ + √ν T` restricted to positive values, `T ~ t(dof)`.
#[derive(Debug, Clone)]
pub struct TruncTSampler {
    params: TruncTParams,
    scale: f64,
    /// `P(μ + √ν T > 0)`.
    mass: f64,
    /// Log normalizing constant of the truncated density.
    log_norm: f64,
    method: Method,
}

#[derive(Debug, Clone)]
enum Method {
    /// Draw from the untruncated t until the draw is positive.
    Rejection(StudentT<f64>),
    /// Inverse distribution function on the retained interval.
    Inverse,
    /// Pareto envelope for an extremely small retained mass, with tail
    /// exponent `alpha` and tangent slope `slope` of `ln(1 + y²/κ)` in `ln y`.
    ParetoTail { alpha: f64, slope: f64 },
}

impl TruncTSampler {
    pub fn new(params: TruncTParams) -> Result<Self> {
        let scale = params.scale();
        let mass = student_t_cdf(params.mu / scale, params.dof);
        let method = if mass >= 0.25 {
            Method::Rejection(
                StudentT::new(params.dof).map_err(|e| Error::Numerical(format!("t sampler: {e}")))?,
            )
        } else {
            let x0 = -params.mu;
            let slope = 2.0 * x0 * x0 / (params.dof * params.nu + x0 * x0);
            let alpha = 0.5 * (params.dof + 1.0) * slope - 1.0;
            if mass < 1e-12 && alpha > 0.5 {
                Method::ParetoTail { alpha, slope }
            } else {
                Method::Inverse
            }
        };
        let dof = params.dof;
        let log_norm = ln_gamma(0.5 * (dof + 1.0)) - ln_gamma(0.5 * dof) - 0.5 * (dof * PI).ln() - scale.ln() - mass.ln();
        Ok(Self {
            params,
            scale,
            mass,
            log_norm,
            method,
        })
    }

    /// Probability that the untruncated t is positive.
    pub fn retained_mass(&self) -> f64 {
        self.mass
    }

    /// Log density of the truncated distribution at `d > 0`.
    pub fn log_density(&self, d: f64) -> f64 {
        let dof = self.params.dof;
        let t = (d - self.params.mu) / self.scale;
        self.log_norm - 0.5 * (dof + 1.0) * (t * t / dof).ln_1p()
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let TruncTParams { mu, dof, .. } = self.params;
        match &self.method {
            Method::Rejection(t) => loop {
                let d = mu + self.scale * t.sample(rng);
                if d > 0.0 {
                    return d;
                }
            },
            Method::Inverse => {
                let u: f64 = 1.0 - rng.random::<f64>();
                (mu - self.scale * student_t_quantile(u * self.mass, dof)).max(0.0)
            }
            Method::ParetoTail { alpha, slope } => {
                // y = d − μ ≥ x0; ln(1 + y²/κ) is convex in ln y, so its
                // tangent at x0 bounds the density by a Pareto tail
                let x0 = -mu;
                let kappa = dof * self.params.nu;
                let m = 0.5 * (dof + 1.0);
                let base = (x0 * x0 / kappa).ln_1p();
                loop {
                    let u: f64 = 1.0 - rng.random::<f64>();
                    let y = x0 * u.powf(-1.0 / alpha);
                    let gap = (y * y / kappa).ln_1p() - base - slope * (y / x0).ln();
                    if rng.random::<f64>() < (-m * gap).exp() {
                        return y - x0;
                    }
                }
            }
        }
    }
}

/// Monte Carlo moments of `(ρ, d)` from `n_draws` draws of `d`, with the
/// conditional expectations over `ρ | d` taken exactly.
pub fn sample_latents<R: Rng + ?Sized>(params: &TruncTParams, n_draws: usize, rng: &mut R) -> Result<LatentEstimate> {
    if n_draws == 0 {
        return Err(Error::Config("at least one latent draw is required".into()));
    }
    let sampler = TruncTSampler::new(*params)?;
    let shape = params.rho_shape();
    let digamma_shape = digamma(shape);
    let gamma_entropy_const = shape + ln_gamma(shape) + (1.0 - shape) * digamma_shape;
    let mut draws = Vec::with_capacity(n_draws);
    let mut entropy = 0.0;
    for _ in 0..n_draws {
        let d = sampler.sample(rng);
        let rate = params.rho_rate(d);
        if !(rate > 0.0 && rate.is_finite()) {
            return Err(Error::Numerical(format!("q(ρ | d) rate {rate} at d = {d}")));
        }
        let e_rho = shape / rate;
        let log_rate = rate.ln();
        draws.push([e_rho, d * e_rho, d * d * e_rho, digamma_shape - log_rate]);
        entropy += gamma_entropy_const - log_rate - sampler.log_density(d);
    }
    let mut estimate = summarize(&draws);
    estimate.entropy = entropy / n_draws as f64;
    Ok(estimate)
}

/// Sample means and the covariance of the means.
pub(crate) fn summarize(draws: &[[f64; 4]]) -> LatentEstimate {
    let n = draws.len() as f64;
    let mut mean = [0.0; 4];
    for d in draws {
        for k in 0..4 {
            mean[k] += d[k];
        }
    }
    for m in &mut mean {
        *m /= n;
    }
    let mut cov = [[0.0; 4]; 4];
    if draws.len() > 1 {
        for d in draws {
            for a in 0..4 {
                for b in 0..4 {
                    cov[a][b] += (d[a] - mean[a]) * (d[b] - mean[b]);
                }
            }
        }
        for row in &mut cov {
            for v in row.iter_mut() {
                *v /= (n - 1.0) * n;
            }
        }
    }
    LatentEstimate {
        moments: LatentMoments::from_array(mean),
        covariance: cov,
        entropy: 0.0,
    }
}
