//! Per-individual maps and order-fixed reductions.
//!
//! With the `parallel` feature the map runs on the rayon pool; the output
//! order, and therefore every downstream reduction, is the same for any
//! number of threads.

use crate::error::Result;
use crate::prelude::*;

#[cfg(feature = "parallel")]
pub fn map<T, R, F>(items: &[T], f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(usize, &T) -> R + Sync + Send,
{
    use rayon::prelude::*;
    items.par_iter().enumerate().map(|(i, t)| f(i, t)).collect()
}

#[cfg(not(feature = "parallel"))]
pub fn map<T, R, F>(items: &[T], f: F) -> Vec<R>
where
    F: Fn(usize, &T) -> R,
{
    items.iter().enumerate().map(|(i, t)| f(i, t)).collect()
}

#[cfg(feature = "parallel")]
pub fn map_mut<T, R, F>(items: &mut [T], f: F) -> Vec<R>
where
    T: Send,
    R: Send,
    F: Fn(usize, &mut T) -> R + Sync + Send,
{
    use rayon::prelude::*;
    items.par_iter_mut().enumerate().map(|(i, t)| f(i, t)).collect()
}

#[cfg(not(feature = "parallel"))]
pub fn map_mut<T, R, F>(items: &mut [T], f: F) -> Vec<R>
where
    F: Fn(usize, &mut T) -> R,
{
    items.iter_mut().enumerate().map(|(i, t)| f(i, t)).collect()
}

/// Collects per-item results, reporting the lowest-index error.
pub fn collect<R>(results: Vec<Result<R>>) -> Result<Vec<R>> {
    results.into_iter().collect()
}

/// Pairwise sum in a fixed index tree.
pub fn tree_sum(values: &[f64]) -> f64 {
    match values.len() {
        0 => 0.0,
        1 => values[0],
        2 => values[0] + values[1],
        n => {
            let (l, r) = values.split_at(n / 2);
            tree_sum(l) + tree_sum(r)
        }
    }
}
