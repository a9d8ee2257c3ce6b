#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use occamlme_core::{GlobalParams, IndividualData, ModelIndicator};
use statrs::function::gamma::ln_gamma;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn normal(rng: &mut impl Rng) -> f64 {
    StandardNormal.sample(rng)
}

/// One individual with `n` rows, `q` fixed columns (intercept first) and
/// `p` candidate effects, of which `active` are nonzero.
pub fn individual(id: &str, n: usize, q: usize, p: usize, active: &[usize], rng: &mut impl Rng) -> IndividualData {
    let x = DMatrix::from_fn(n, q, |_, c| if c == 0 { 1.0 } else { 0.0 });
    let mut x = x;
    for r in 0..n {
        for c in 1..q {
            x[(r, c)] = normal(rng);
        }
    }
    let s = DMatrix::from_fn(n, p, |_, _| normal(rng));
    let y = (0..n)
        .map(|r| {
            let fixed: f64 = (0..q).map(|c| x[(r, c)] * 0.5 * c as f64).sum();
            let random: f64 = active.iter().map(|&j| s[(r, j)] * 1.5).sum();
            fixed + random + 0.3 * normal(rng) + 0.2
        })
        .collect();
    IndividualData::new(id, y, x, s).unwrap()
}

/// `m` individuals with sizes in `[n_lo, n_hi]` and a random sparse truth.
pub fn dataset(m: usize, n_lo: usize, n_hi: usize, q: usize, p: usize, seed: u64) -> Vec<IndividualData> {
    let mut r = rng(seed);
    (0..m)
        .map(|i| {
            let n = r.random_range(n_lo..=n_hi);
            let active: Vec<usize> = (0..p).filter(|_| r.random::<f64>() < 0.3).collect();
            individual(&format!("ind{i}"), n, q, p, &active, &mut r)
        })
        .collect()
}

pub fn globals(q: usize) -> GlobalParams {
    GlobalParams {
        zeta_star: (0..q).map(|c| 0.1 * c as f64).collect(),
        psi: 1.3,
        g2: 2.0,
        a: 3.0,
        b: 0.5,
        a1: 1.5,
        b1: 4.0,
        c: 0.0,
        f: 10.0,
    }
}

pub fn random_globals(q: usize, rng: &mut impl Rng) -> GlobalParams {
    GlobalParams {
        zeta_star: (0..q).map(|_| 0.5 * normal(rng)).collect(),
        psi: rng.random_range(0.3..3.0),
        g2: rng.random_range(0.3..5.0),
        a: rng.random_range(1.5..6.0),
        b: rng.random_range(0.1..2.0),
        a1: rng.random_range(0.5..4.0),
        b1: rng.random_range(0.5..8.0),
        c: 0.0,
        f: 10.0,
    }
}

/// Central difference of `f` at `x` with relative step `h`.
pub fn central_diff(f: impl Fn(f64) -> f64, x: f64, h: f64) -> f64 {
    let step = h * x.abs().max(1.0);
    (f(x + step) - f(x - step)) / (2.0 * step)
}

/// Names of the population parameters a coordinate of [`param`] can address.
pub fn param_names(q: usize, skew: bool) -> Vec<String> {
    let mut names: Vec<String> = (0..q).map(|j| format!("zeta{j}")).collect();
    names.extend(["psi", "a", "b", "a1", "b1", "g2"].map(String::from));
    if skew {
        names.extend(["c", "f"].map(String::from));
    }
    names
}

pub fn param<'a>(g: &'a mut GlobalParams, name: &str) -> &'a mut f64 {
    match name {
        "psi" => &mut g.psi,
        "a" => &mut g.a,
        "b" => &mut g.b,
        "a1" => &mut g.a1,
        "b1" => &mut g.b1,
        "g2" => &mut g.g2,
        "c" => &mut g.c,
        "f" => &mut g.f,
        z => &mut g.zeta_star[z.trim_start_matches("zeta").parse::<usize>().unwrap()],
    }
}

/// Central-difference derivative of `objective` in each named parameter at
/// `g` (step `1e-5·|θ|`), multiplied by `max(|θ|, 1)` and divided by
/// `max(|objective|, 1)`.
pub fn scaled_gradients(objective: impl Fn(&GlobalParams) -> f64, g: &GlobalParams, names: &[String]) -> Vec<(String, f64)> {
    let scale = objective(g).abs().max(1.0);
    names
        .iter()
        .map(|name| {
            let x = *param(&mut g.clone(), name);
            let step = if x == 0.0 { 1e-5 } else { 1e-5 * x.abs() };
            let at = |v: f64| {
                let mut h = g.clone();
                *param(&mut h, name) = v;
                objective(&h)
            };
            let d = (at(x + step) - at(x - step)) / (2.0 * step);
            (name.clone(), d * x.abs().max(1.0) / scale)
        })
        .collect()
}

/// `E[ρ]`, `E[ρd]`, `E[ρd²]`, `E[ln ρ]` under `q(d)` restricted to `d > 0`
/// and `q(ρ | d)`, by Simpson's rule after mapping `(0, ∞)` to `(0, 1)`.
pub fn latent_moments_by_quadrature(p: &occamlme_core::skewt::TruncTParams) -> [f64; 4] {
    use statrs::function::gamma::digamma;
    let shape = 0.5 * (p.dof + 1.0);
    let span = p.nu.sqrt() + p.mu.abs();
    let n = 400_000usize;
    let h = 1.0 / n as f64;
    let mut acc = [0.0f64; 5];
    for k in 0..n {
        let u = k as f64 * h;
        let d = span * u / (1.0 - u);
        let jac = span / ((1.0 - u) * (1.0 - u));
        let z = (d - p.mu) * (d - p.mu) / (p.dof * p.nu);
        let dens = (-0.5 * (p.dof + 1.0) * z.ln_1p()).exp() * jac;
        let rate = 0.5 * p.lambda * (1.0 + z);
        let e_rho = shape / rate;
        let weight = match k {
            0 => 1.0,
            k if k % 2 == 1 => 4.0,
            _ => 2.0,
        } * dens;
        acc[0] += weight;
        acc[1] += weight * e_rho;
        acc[2] += weight * e_rho * d;
        acc[3] += weight * e_rho * d * d;
        acc[4] += weight * (digamma(shape) - rate.ln());
    }
    [acc[1] / acc[0], acc[2] / acc[0], acc[3] / acc[0], acc[4] / acc[0]]
}

pub fn all_models(p: usize) -> Vec<ModelIndicator> {
    (0u64..1 << p)
        .map(|bits| ModelIndicator::from_indices(p, &(0..p).filter(|j| bits >> j & 1 == 1).collect::<Vec<_>>()))
        .collect()
}

/// `[1 | S_γ]` built column by column.
pub fn active_design(data: &IndividualData, gamma: &ModelIndicator) -> DMatrix<f64> {
    let cols: Vec<usize> = gamma.selected().collect();
    DMatrix::from_fn(data.n(), cols.len() + 1, |r, c| if c == 0 { 1.0 } else { data.s[(r, cols[c - 1])] })
}

pub fn residual(data: &IndividualData, zeta: &[f64]) -> DVector<f64> {
    DVector::from_column_slice(&data.y) - &data.x * DVector::from_column_slice(zeta)
}

/// Multivariate-t log density of the residual after integrating out
/// `β ~ N(0, σ²Λ⁻¹)` and `σ² ~ IG(a, b)`.
pub fn marginal_oracle(data: &IndividualData, gamma: &ModelIndicator, g: &GlobalParams) -> f64 {
    let z = active_design(data, gamma);
    let n = data.n() as f64;
    let mut prior_cov = DMatrix::<f64>::identity(z.ncols(), z.ncols()) * g.g2;
    prior_cov[(0, 0)] = g.psi;
    let sigma0 = DMatrix::<f64>::identity(data.n(), data.n()) + &z * prior_cov * z.transpose();
    let r = residual(data, &g.zeta_star);
    let lu = sigma0.clone().lu();
    let quad = r.dot(&lu.solve(&r).unwrap());
    ln_gamma(g.a + n / 2.0) - ln_gamma(g.a) - 0.5 * n * (2.0 * std::f64::consts::PI * g.b).ln()
        - 0.5 * lu.determinant().ln()
        - (g.a + n / 2.0) * (1.0 + quad / (2.0 * g.b)).ln()
}

