//! Occam's window: a per-individual set of `K` distinct candidate models
//! with renormalized weights, improved by a greedy single-flip search.

use crate::error::{Error, Result};
use crate::model::ModelIndicator;
use crate::normal_em::stats::{Evaluator, ModelFit};
use crate::prelude::*;
use rand::Rng;
use rand_distr::{Binomial, Distribution};

/// Normalizes log scores into weights with log-sum-exp.
pub fn normalize_log_weights(log_scores: &[f64]) -> Option<Vec<f64>> {
    let max = log_scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return None;
    }
    let unnorm: Vec<f64> = log_scores.iter().map(|s| (s - max).exp()).collect();
    let total: f64 = unnorm.iter().sum();
    Some(unnorm.into_iter().map(|u| u / total).collect())
}

fn binomial(n: usize, k: usize) -> u128 {
    let k = k.min(n - k);
    let mut acc: u128 = 1;
    for i in 0..k {
        acc = acc * (n - i) as u128 / (i + 1) as u128;
    }
    acc
}

/// Smallest `p*` with `Σ_{k=1}^{p*} C(p, k) ≥ K`, capped at `p`.
pub fn p_star(p: usize, k: usize) -> usize {
    let mut total: u128 = 0;
    for s in 1..=p {
        total += binomial(p, s);
        if total >= k as u128 {
            return s;
        }
    }
    p
}

/// All models with at most `max_size` variables, by size then lexicographic
/// order of the selected indices.
pub fn models_up_to(p: usize, max_size: usize) -> Vec<ModelIndicator> {
    let mut out = vec![ModelIndicator::empty(p)];
    for size in 1..=max_size.min(p) {
        let mut idx: Vec<usize> = (0..size).collect();
        loop {
            out.push(ModelIndicator::from_indices(p, &idx));
            // advance to the next combination
            let mut pos = size;
            loop {
                if pos == 0 {
                    break;
                }
                pos -= 1;
                if idx[pos] < p - size + pos {
                    break;
                }
                if pos == 0 {
                    pos = usize::MAX;
                    break;
                }
            }
            if pos == usize::MAX || idx[pos] >= p - size + pos {
                break;
            }
            idx[pos] += 1;
            for j in pos + 1..size {
                idx[j] = idx[j - 1] + 1;
            }
        }
    }
    out
}

/// The window of one individual.
#[derive(Debug, Clone)]
pub struct OccamWindow {
    fits: Vec<ModelFit>,
    weights: Vec<f64>,
    min_score: f64,
    /// Proposals since the last accepted replacement (`t_i`).
    pub stale_count: u64,
    score_includes_prior: bool,
}

impl OccamWindow {
    /// Builds the initial window: every model with up to `p*` variables (and
    /// the empty model) is scored by log prior + log marginal and the best
    /// `k` are kept. The enumeration depth grows if it yields fewer than `k`
    /// candidates.
    pub fn initialize(eval: &Evaluator<'_>, k: usize, score_includes_prior: bool) -> Result<Self> {
        let p = eval.p();
        if k == 0 {
            return Err(Error::Config("window size K must be at least 1".into()));
        }
        if p < 127 && k as u128 > (1u128 << p) {
            return Err(Error::Config(format!("window size K = {k} exceeds the 2^{p} available models")));
        }
        let mut depth = p_star(p, k);
        let mut candidates = models_up_to(p, depth);
        while candidates.len() < k && depth < p {
            depth += 1;
            candidates = models_up_to(p, depth);
        }
        let mut fits = candidates.iter().map(|g| eval.fit(g)).collect::<Result<Vec<_>>>()?;
        // stable sort keeps enumeration order among ties
        fits.sort_by(|a, b| b.log_score().total_cmp(&a.log_score()));
        fits.truncate(k);
        Self::from_fits(eval, fits, score_includes_prior)
    }

    /// Window over explicitly chosen models.
    pub fn from_models(eval: &Evaluator<'_>, models: &[ModelIndicator], score_includes_prior: bool) -> Result<Self> {
        for (i, m) in models.iter().enumerate() {
            if models[..i].contains(m) {
                return Err(Error::Config(format!("duplicate model {m} in window")));
            }
        }
        let fits = models.iter().map(|g| eval.fit(g)).collect::<Result<Vec<_>>>()?;
        Self::from_fits(eval, fits, score_includes_prior)
    }

    fn from_fits(eval: &Evaluator<'_>, fits: Vec<ModelFit>, score_includes_prior: bool) -> Result<Self> {
        if fits.is_empty() {
            return Err(Error::Config("empty window".into()));
        }
        let mut w = Self {
            fits,
            weights: Vec::new(),
            min_score: 0.0,
            stale_count: 0,
            score_includes_prior,
        };
        w.renormalize(&eval.design.id)?;
        Ok(w)
    }

    fn acceptance_score(&self, fit: &ModelFit) -> f64 {
        if self.score_includes_prior {
            fit.log_score()
        } else {
            fit.log_marginal
        }
    }

    fn renormalize(&mut self, id: &str) -> Result<()> {
        let scores: Vec<f64> = self.fits.iter().map(|f| f.log_score()).collect();
        self.weights = normalize_log_weights(&scores).ok_or_else(|| Error::DegenerateWindow(id.into()))?;
        self.min_score = self
            .fits
            .iter()
            .map(|f| self.acceptance_score(f))
            .fold(f64::INFINITY, f64::min);
        Ok(())
    }

    /// Recomputes every cached model at new population parameters.
    pub fn refresh(&mut self, eval: &Evaluator<'_>) -> Result<()> {
        for fit in &mut self.fits {
            *fit = eval.fit(&fit.gamma)?;
        }
        self.renormalize(&eval.design.id)
    }

    pub fn len(&self) -> usize {
        self.fits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.fits.is_empty()
    }

    pub fn fits(&self) -> &[ModelFit] {
        &self.fits
    }

    pub fn models(&self) -> impl Iterator<Item = &ModelIndicator> {
        self.fits.iter().map(|f| &f.gamma)
    }

    pub fn log_marginals(&self) -> Vec<f64> {
        self.fits.iter().map(|f| f.log_marginal).collect()
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// Minimum acceptance score in the window (m̃_i).
    pub fn min_log_marginal(&self) -> f64 {
        self.min_score
    }

    pub fn contains(&self, gamma: &ModelIndicator) -> bool {
        self.fits.iter().any(|f| &f.gamma == gamma)
    }

    /// Index of the highest-weight model.
    pub fn top(&self) -> usize {
        let mut best = 0;
        for (k, w) in self.weights.iter().enumerate() {
            if *w > self.weights[best] {
                best = k;
            }
        }
        best
    }

    /// `E[γ_j | y] = Σ_k w_k γ_kj`.
    pub fn inclusion_probabilities(&self) -> Vec<f64> {
        let p = self.fits[0].gamma.p();
        let mut out = vec![0.0; p];
        for (fit, w) in self.fits.iter().zip(&self.weights) {
            for j in fit.gamma.selected() {
                out[j] += w;
            }
        }
        out
    }

    /// Model-averaged posterior mean of `(β₁, β)`, zero for excluded effects.
    pub fn averaged_coefficients(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.fits[0].gamma.p() + 1];
        for (fit, w) in self.fits.iter().zip(&self.weights) {
            for (k, v) in fit.embed(&fit.stats.a).iter().enumerate() {
                out[k] += w * v;
            }
        }
        out
    }

    /// Model evicted on replacement: lowest score, then most variables, then
    /// lowest index.
    fn eviction_index(&self) -> usize {
        let mut worst = 0;
        for k in 1..self.fits.len() {
            let (sk, sw) = (self.acceptance_score(&self.fits[k]), self.acceptance_score(&self.fits[worst]));
            if sk < sw || (sk == sw && self.fits[k].gamma.count() > self.fits[worst].gamma.count()) {
                worst = k;
            }
        }
        worst
    }

    /// One greedy search step: flip one variable of a uniformly chosen model
    /// and keep the proposal if it is new and beats the window minimum.
    pub fn propose_flip<R: Rng + ?Sized>(&mut self, eval: &Evaluator<'_>, rng: &mut R) -> Result<bool> {
        let p = eval.p();
        if p == 0 {
            self.stale_count += 1;
            return Ok(false);
        }
        let k = rng.random_range(0..self.fits.len());
        let j = rng.random_range(0..p);
        let proposal = self.fits[k].gamma.flipped(j);
        if self.contains(&proposal) {
            self.stale_count += 1;
            return Ok(false);
        }
        let fit = eval.fit(&proposal)?;
        if self.acceptance_score(&fit) > self.min_score {
            let evict = self.eviction_index();
            self.fits[evict] = fit;
            self.renormalize(&eval.design.id)?;
            self.stale_count = 0;
            Ok(true)
        } else {
            self.stale_count += 1;
            Ok(false)
        }
    }
}

/// Splits a budget of `total` search updates across individuals: draw
/// `r_i ~ Exp(1 + t_i)`, normalize to probabilities and draw the counts from
/// a multinomial.
pub fn allocate_updates<R: Rng + ?Sized>(stale_counts: &[u64], total: usize, rng: &mut R) -> Vec<usize> {
    let m = stale_counts.len();
    let mut out = vec![0usize; m];
    if m == 0 || total == 0 {
        return out;
    }
    let draws: Vec<f64> = stale_counts
        .iter()
        .map(|&t| {
            let u: f64 = 1.0 - rng.random::<f64>();
            -u.ln() / (1.0 + t as f64)
        })
        .collect();
    let sum: f64 = draws.iter().sum();
    let mut remaining = total as u64;
    let mut mass_left = 1.0;
    for i in 0..m {
        if remaining == 0 {
            break;
        }
        let prob = draws[i] / sum;
        if i == m - 1 {
            out[i] = remaining as usize;
            break;
        }
        let cond = if mass_left > 0.0 { (prob / mass_left).clamp(0.0, 1.0) } else { 1.0 };
        let count = Binomial::new(remaining, cond).map(|b| b.sample(rng)).unwrap_or(remaining);
        out[i] = count as usize;
        remaining -= count;
        mass_left -= prob;
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{stream, Purpose};

    #[test]
    fn p_star_examples() {
        assert_eq!(p_star(10, 30), 2);
        assert_eq!(p_star(20, 100), 2);
        assert_eq!(p_star(4, 16), 4);
        assert_eq!(p_star(10, 10), 1);
    }

    #[test]
    fn enumeration_counts() {
        assert_eq!(models_up_to(10, 2).len(), 1 + 10 + 45);
        assert_eq!(models_up_to(4, 4).len(), 16);
        let all = models_up_to(5, 5);
        for (i, m) in all.iter().enumerate() {
            assert!(!all[..i].contains(m));
        }
    }

    #[test]
    fn weights_normalize() {
        let w = normalize_log_weights(&[0.0, 3f64.ln()]).unwrap();
        assert!((w[0] - 0.25).abs() < 1e-15 && (w[1] - 0.75).abs() < 1e-15);
        let w = normalize_log_weights(&[-800.0; 4]).unwrap();
        assert!(w.iter().all(|x| (x - 0.25).abs() < 1e-15));
        assert!(normalize_log_weights(&[f64::NEG_INFINITY; 3]).is_none());
    }

    #[test]
    fn allocation_edge_cases() {
        let mut rng = stream(1, Purpose::Allocation, 0, 0);
        assert_eq!(allocate_updates(&[0, 3, 5], 0, &mut rng), vec![0, 0, 0]);
        for total in [1usize, 7, 1000] {
            let l = allocate_updates(&[0, 1, 2, 100, 0], total, &mut rng);
            assert_eq!(l.iter().sum::<usize>(), total);
        }
    }

    #[test]
    fn allocation_exchangeable_when_stale_counts_equal() {
        let m = 5;
        let total = 20;
        let reps = 100_000;
        let mut rng = stream(11, Purpose::Allocation, 0, 0);
        let mut sums = vec![0.0; m];
        let mut sq = vec![0.0; m];
        for _ in 0..reps {
            let l = allocate_updates(&[4; 5], total, &mut rng);
            for i in 0..m {
                sums[i] += l[i] as f64;
                sq[i] += (l[i] * l[i]) as f64;
            }
        }
        let expect = total as f64 / m as f64;
        for i in 0..m {
            let mean = sums[i] / reps as f64;
            let var = sq[i] / reps as f64 - mean * mean;
            let se = (var / reps as f64).sqrt();
            assert!((mean - expect).abs() < 3.0 * se, "individual {i}: {mean} vs {expect} (se {se})");
        }
    }

    #[test]
    fn allocation_favours_recently_successful() {
        let mut stale = vec![1_000_000u64; 10];
        stale[3] = 0;
        let mut rng = stream(5, Purpose::Allocation, 0, 0);
        let reps = 10_000;
        let total = 100;
        let mut got = 0usize;
        for _ in 0..reps {
            got += allocate_updates(&stale, total, &mut rng)[3];
        }
        assert!(got as f64 / (reps * total) as f64 >= 0.99);
    }
}
