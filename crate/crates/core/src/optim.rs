//! One-dimensional maximizers and root finders used by the M-steps.

use crate::error::{Error, Result};
use crate::prelude::*;

const INV_PHI: f64 = 0.618_033_988_749_894_8;

/// Result of a one-dimensional search.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Optimum {
    pub x: f64,
    pub value: f64,
    /// The maximizer sits on (within tolerance of) the lower search bound.
    pub at_lower_bound: bool,
    /// The maximizer sits on (within tolerance of) the upper search bound.
    pub at_upper_bound: bool,
}

/// Golden-section refinement of a maximum bracketed by `[lo, hi]`.
pub fn golden_section_max<F: Fn(f64) -> f64>(f: &F, mut lo: f64, mut hi: f64, tol: f64) -> (f64, f64) {
    let mut x1 = hi - INV_PHI * (hi - lo);
    let mut x2 = lo + INV_PHI * (hi - lo);
    let mut f1 = f(x1);
    let mut f2 = f(x2);
    while hi - lo > tol {
        if f1 < f2 {
            lo = x1;
            x1 = x2;
            f1 = f2;
            x2 = lo + INV_PHI * (hi - lo);
            f2 = f(x2);
        } else {
            hi = x2;
            x2 = x1;
            f2 = f1;
            x1 = hi - INV_PHI * (hi - lo);
            f1 = f(x1);
        }
    }
    let (fl, fh) = (f(lo), f(hi));
    let mut best = (x1, f1);
    for cand in [(x2, f2), (lo, fl), (hi, fh)] {
        if cand.1 > best.1 {
            best = cand;
        }
    }
    best
}

/// Maximizes `f` over `[lo, hi]`.
///
/// A uniform grid of `grid` points (plus any `starts` inside the interval)
/// locates the best bracket, which golden-section search then refines to an
/// interval width of `tol`.
pub fn maximize_on_interval<F: Fn(f64) -> f64>(
    f: &F,
    lo: f64,
    hi: f64,
    grid: usize,
    starts: &[f64],
    tol: f64,
) -> Optimum {
    assert!(hi > lo && grid >= 3);
    let step = (hi - lo) / (grid - 1) as f64;
    let mut points: Vec<f64> = (0..grid).map(|k| lo + step * k as f64).collect();
    points.extend(starts.iter().copied().filter(|s| *s > lo && *s < hi && s.is_finite()));
    points.sort_by(|a, b| a.total_cmp(b));
    points.dedup();
    let values: Vec<f64> = points.iter().map(|&x| f(x)).collect();
    let mut best = 0;
    for k in 1..points.len() {
        if values[k] > values[best] || values[best].is_nan() {
            best = k;
        }
    }
    let left = points[best.saturating_sub(1)];
    let right = points[(best + 1).min(points.len() - 1)];
    let (x, value) = if right > left {
        golden_section_max(f, left, right, tol)
    } else {
        (points[best], values[best])
    };
    let (x, value) = if value >= values[best] { (x, value) } else { (points[best], values[best]) };
    Optimum {
        x,
        value,
        at_lower_bound: x - lo <= 2.0 * tol,
        at_upper_bound: hi - x <= 2.0 * tol,
    }
}

/// Maximizes `f` over `x` in `[lo, hi]` (`lo > 0`) by searching on `ln x`.
pub fn maximize_positive<F: Fn(f64) -> f64>(f: &F, lo: f64, hi: f64, start: f64, tol_log: f64) -> Optimum {
    let g = |t: f64| f(t.exp());
    let starts = if start > 0.0 { vec![start.ln()] } else { Vec::new() };
    let opt = maximize_on_interval(&g, lo.ln(), hi.ln(), 65, &starts, tol_log);
    Optimum {
        x: opt.x.exp(),
        ..opt
    }
}

/// Bisection for a sign change of `f` on `[lo, hi]`, run until the bracket
/// cannot be split further in floating point.
pub fn bisect<F: Fn(f64) -> f64>(f: &F, mut lo: f64, mut hi: f64) -> Result<f64> {
    let mut flo = f(lo);
    let fhi = f(hi);
    if flo == 0.0 {
        return Ok(lo);
    }
    if fhi == 0.0 {
        return Ok(hi);
    }
    if flo.signum() == fhi.signum() || flo.is_nan() || fhi.is_nan() {
        return Err(Error::Solver(format!(
            "no sign change on [{lo:e}, {hi:e}]: f(lo) = {flo:e}, f(hi) = {fhi:e}"
        )));
    }
    for _ in 0..2_000 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        let fm = f(mid);
        if fm == 0.0 {
            return Ok(mid);
        }
        if fm.signum() == flo.signum() {
            lo = mid;
            flo = fm;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}
