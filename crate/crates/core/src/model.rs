//! Domain types and priors shared by the fitting procedures.

use crate::error::{Error, Result, ValidationIssue};
use crate::prelude::*;
use crate::special::ln_gamma;
use core::fmt;
use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

/// Observations for one individual.
///
/// `x` is the `n × q` fixed-effect design whose first column is all ones
/// (it carries the population intercept); `s` is the `n × p` design of
/// candidate random effects. The individual random intercept is implicit and
/// always included.
#[derive(Debug, Clone, PartialEq)]
pub struct IndividualData {
    pub id: String,
    pub y: Vec<f64>,
    pub x: DMatrix<f64>,
    pub s: DMatrix<f64>,
}

impl IndividualData {
    pub fn new(id: impl Into<String>, y: Vec<f64>, x: DMatrix<f64>, s: DMatrix<f64>) -> Result<Self> {
        let id = id.into();
        if y.is_empty() {
            return Err(Error::Validation(vec![ValidationIssue {
                individual: id,
                problem: "no observations".into(),
            }]));
        }
        if x.nrows() != y.len() || s.nrows() != y.len() {
            return Err(Error::Validation(vec![ValidationIssue {
                individual: id,
                problem: format!(
                    "row mismatch: y has {}, X has {}, S has {}",
                    y.len(),
                    x.nrows(),
                    s.nrows()
                ),
            }]));
        }
        Ok(Self { id, y, x, s })
    }

    pub fn n(&self) -> usize {
        self.y.len()
    }

    pub fn q(&self) -> usize {
        self.x.ncols()
    }

    pub fn p(&self) -> usize {
        self.s.ncols()
    }

    /// `[1 | S]`: the random-effect design including the individual intercept.
    pub fn augmented_random_design(&self) -> DMatrix<f64> {
        let n = self.n();
        let p = self.p();
        DMatrix::from_fn(n, p + 1, |r, c| if c == 0 { 1.0 } else { self.s[(r, c - 1)] })
    }
}

/// Shape added to the inverse-gamma posterior of σ² per individual by the
/// observation likelihood.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExponentConvention {
    /// `a + n/2`, the conjugate normal update (matches numerical integration).
    #[default]
    Conjugate,
    /// `a + n`, doubling the likelihood contribution to the shape.
    Literal,
}

impl ExponentConvention {
    pub fn shape_increment(self, n: usize) -> f64 {
        match self {
            ExponentConvention::Conjugate => 0.5 * n as f64,
            ExponentConvention::Literal => n as f64,
        }
    }
}

/// How the stored slab parameter `g2` maps to the slab prior variance
/// (in units of σ²) of the selected random effects.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SlabConvention {
    /// Prior precision entries `1/g2`: the slab variance is `g2`.
    #[default]
    Variance,
    /// Prior precision entries `1/g` with `g = sqrt(g2)`.
    Scale,
}

impl SlabConvention {
    pub fn slab_variance(self, g2: f64) -> f64 {
        match self {
            SlabConvention::Variance => g2,
            SlabConvention::Scale => g2.sqrt(),
        }
    }

    pub fn g2_from_variance(self, v: f64) -> f64 {
        match self {
            SlabConvention::Variance => v,
            SlabConvention::Scale => v * v,
        }
    }
}

/// Population-level parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GlobalParams {
    /// `(ζ0, ζ)`, aligned with the columns of `X`.
    pub zeta_star: Vec<f64>,
    /// Prior variance scale of the individual random intercept.
    pub psi: f64,
    /// Slab scale; see [`SlabConvention`].
    pub g2: f64,
    /// Inverse-gamma shape of the error variance.
    pub a: f64,
    /// Inverse-gamma scale of the error variance.
    pub b: f64,
    /// Beta-binomial hyperparameters.
    pub a1: f64,
    pub b1: f64,
    /// Skewness (skew-t errors only).
    pub c: f64,
    /// Degrees of freedom (skew-t errors only).
    pub f: f64,
}

impl GlobalParams {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("psi", self.psi),
            ("g2", self.g2),
            ("a", self.a),
            ("b", self.b),
            ("a1", self.a1),
            ("b1", self.b1),
            ("f", self.f),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Domain(format!("{name} must be positive and finite, got {v}")));
            }
        }
        if !self.c.is_finite() || self.zeta_star.iter().any(|z| !z.is_finite()) {
            return Err(Error::Domain("non-finite location parameter".into()));
        }
        Ok(())
    }
}

/// Inclusion indicator over the `p` candidate random effects.
#[derive(Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ModelIndicator {
    words: Vec<u64>,
    p: usize,
    count: usize,
}

impl ModelIndicator {
    pub fn empty(p: usize) -> Self {
        Self {
            words: vec![0; p.div_ceil(64).max(1)],
            p,
            count: 0,
        }
    }

    pub fn from_indices(p: usize, indices: &[usize]) -> Self {
        let mut m = Self::empty(p);
        for &j in indices {
            if !m.get(j) {
                m.flip(j);
            }
        }
        m
    }

    /// Parses `"0110..."` where character `j` is the indicator of variable `j`.
    pub fn from_bitstring(bits: &str) -> Result<Self> {
        let p = bits.len();
        let mut m = Self::empty(p);
        for (j, ch) in bits.chars().enumerate() {
            match ch {
                '0' => {}
                '1' => m.flip(j),
                other => return Err(Error::Domain(format!("invalid bit {other:?} in model string"))),
            }
        }
        Ok(m)
    }

    pub fn p(&self) -> usize {
        self.p
    }

    /// Number of included variables, `p_γ`.
    pub fn count(&self) -> usize {
        self.count
    }

    pub fn get(&self, j: usize) -> bool {
        assert!(j < self.p, "variable {j} out of range for p = {}", self.p);
        self.words[j / 64] >> (j % 64) & 1 == 1
    }

    pub fn flip(&mut self, j: usize) {
        assert!(j < self.p, "variable {j} out of range for p = {}", self.p);
        self.words[j / 64] ^= 1 << (j % 64);
        if self.get(j) {
            self.count += 1;
        } else {
            self.count -= 1;
        }
    }

    pub fn flipped(&self, j: usize) -> Self {
        let mut m = self.clone();
        m.flip(j);
        m
    }

    /// Indices of included variables in increasing order.
    pub fn selected(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.p).filter(move |&j| self.get(j))
    }

    pub fn bitstring(&self) -> String {
        (0..self.p).map(|j| if self.get(j) { '1' } else { '0' }).collect()
    }
}

impl fmt::Debug for ModelIndicator {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "ModelIndicator({})", self.bitstring())
    }
}

impl fmt::Display for ModelIndicator {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.bitstring())
    }
}

/// Beta-binomial log prior of a model with `size` of `p` variables included.
pub fn log_prior_size(size: usize, p: usize, a1: f64, b1: f64) -> Result<f64> {
    if !(a1 > 0.0 && b1 > 0.0) {
        return Err(Error::Domain(format!("beta-binomial parameters must be positive, got a1={a1}, b1={b1}")));
    }
    if size > p {
        return Err(Error::Domain(format!("model size {size} exceeds p = {p}")));
    }
    let k = size as f64;
    let p = p as f64;
    Ok(ln_gamma(a1 + b1) - ln_gamma(a1) - ln_gamma(b1) + ln_gamma(k + a1) + ln_gamma(p - k + b1)
        - ln_gamma(p + a1 + b1))
}

/// Beta-binomial log prior mass of a single model.
pub fn log_prior_gamma(gamma: &ModelIndicator, a1: f64, b1: f64) -> Result<f64> {
    log_prior_size(gamma.count(), gamma.p(), a1, b1)
}

/// Shared dimensions of a validated dataset.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Dims {
    pub q: usize,
    pub p: usize,
}

/// Checks that every individual has the same `q` and `p`, at least one
/// observation, matching row counts, finite values and an all-ones first
/// fixed-effect column.
pub fn validate_dataset(data: &[IndividualData]) -> Result<Dims> {
    let first = data.first().ok_or(Error::NoIndividuals)?;
    let dims = Dims {
        q: first.q(),
        p: first.p(),
    };
    let mut issues = Vec::new();
    let mut report = |id: &str, problem: String| {
        issues.push(ValidationIssue {
            individual: id.into(),
            problem,
        })
    };
    if dims.q == 0 {
        report(&first.id, "X has no columns; the first column must hold the intercept".into());
    }
    for ind in data {
        let n = ind.y.len();
        if n == 0 {
            report(&ind.id, "no observations".into());
            continue;
        }
        if ind.x.nrows() != n || ind.s.nrows() != n {
            report(
                &ind.id,
                format!("row mismatch: y has {n}, X has {}, S has {}", ind.x.nrows(), ind.s.nrows()),
            );
            continue;
        }
        if ind.q() != dims.q {
            report(&ind.id, format!("X has {} columns, expected {}", ind.q(), dims.q));
        }
        if ind.p() != dims.p {
            report(&ind.id, format!("S has {} columns, expected {}", ind.p(), dims.p));
        }
        if ind.y.iter().any(|v| !v.is_finite()) {
            report(&ind.id, "non-finite response".into());
        }
        if ind.x.iter().any(|v| !v.is_finite()) {
            report(&ind.id, "non-finite entry in X".into());
        }
        if ind.s.iter().any(|v| !v.is_finite()) {
            report(&ind.id, "non-finite entry in S".into());
        }
        if ind.q() > 0 && ind.x.column(0).iter().any(|&v| v != 1.0) {
            report(&ind.id, "first column of X must be all ones".into());
        }
    }
    if issues.is_empty() {
        Ok(dims)
    } else {
        Err(Error::Validation(issues))
    }
}
