//! Population curve `Xζ*` over a covariate grid.

use nalgebra::{DMatrix, DVector};

use crate::data::ColumnRoles;
use crate::error::CliError;

/// Evaluates `grid · ζ*`, one value per grid row.
pub fn population_curve(zeta: &[f64], grid: &DMatrix<f64>) -> Result<Vec<f64>, CliError> {
    if grid.ncols() != zeta.len() {
        return Err(CliError::Config(format!(
            "curve grid has {} columns but the fit has {} fixed effects",
            grid.ncols(),
            zeta.len()
        )));
    }
    Ok((grid * DVector::from_column_slice(zeta)).iter().copied().collect())
}

/// `points` evenly spaced values from `from` to `to` inclusive.
pub fn linspace(from: f64, to: f64, points: usize) -> Vec<f64> {
    match points {
        0 => Vec::new(),
        1 => vec![from],
        _ => (0..points)
            .map(|k| from + (to - from) * k as f64 / (points - 1) as f64)
            .collect(),
    }
}

/// Fixed-effect rows along the time axis, with every other covariate at zero.
pub fn time_grid(roles: &ColumnRoles, times: &[f64]) -> DMatrix<f64> {
    let zeros = vec![0.0; roles.fixed.len()];
    let rows: Vec<Vec<f64>> = times.iter().map(|&t| roles.fixed_row(Some(t), &zeros)).collect();
    let width = roles.fixed_names().len();
    DMatrix::from_fn(times.len(), width, |r, c| rows[r][c])
}
