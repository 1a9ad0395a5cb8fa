//! Time slices along a run where the dissipation has become small.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::flow::SeriesRow;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Slice {
    pub t: f64,
    pub energy: f64,
    pub dissipation: f64,
    pub mass: f64,
    pub s_min: f64,
    /// `∫ S² exp(2f/n) dμ`, to be compared with `λ² + |dissipation|`.
    pub scalar_sq_weighted: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SliceReport {
    pub tol: f64,
    pub lambda: f64,
    pub slices: Vec<Slice>,
    /// `F` was non-increasing and flattening out at the end of the run.
    pub bounded_below_observed: bool,
    /// `max |∫ S² exp(2f/n) - (λ² - dissipation)|` over every row.
    pub max_identity_residual: f64,
    /// `(t, max_x S)` for every row.
    pub sup_scalar: Vec<(f64, f64)>,
}

impl SliceReport {
    /// `max |∫ S² exp(2f/n) - λ²|` over the qualifying slices.
    pub fn max_scalar_sq_deviation(&self) -> f64 {
        let l2 = self.lambda * self.lambda;
        self.slices
            .iter()
            .map(|s| (s.scalar_sq_weighted - l2).abs())
            .fold(0.0, f64::max)
    }

    pub fn max_mass_deviation(&self) -> f64 {
        self.slices.iter().map(|s| (s.mass - 1.0).abs()).fold(0.0, f64::max)
    }
}

/// Collects every row with `|dissipation| ≤ tol`.
///
/// Rows must come from a balanced run so that `F` and the dissipation are
/// recorded. Fails with `EmptyReport` when no row qualifies.
pub fn palais_smale_extract(rows: &[SeriesRow], lambda: f64, tol: f64) -> Result<SliceReport> {
    let mut energies = Vec::with_capacity(rows.len());
    let mut max_identity_residual: f64 = 0.0;
    let mut slices = Vec::new();
    for row in rows {
        let (Some(energy), Some(dissipation)) = (row.energy, row.dissipation) else {
            return Err(Error::NotBalanced);
        };
        energies.push(energy);
        let residual = (row.scalar_sq_weighted - (lambda * lambda - dissipation)).abs();
        max_identity_residual = max_identity_residual.max(residual);
        if dissipation.abs() <= tol {
            slices.push(Slice {
                t: row.t,
                energy,
                dissipation,
                mass: row.mass,
                s_min: row.s_min,
                scalar_sq_weighted: row.scalar_sq_weighted,
            });
        }
    }
    if slices.is_empty() {
        return Err(Error::EmptyReport { tol });
    }
    let monotone = energies.windows(2).all(|w| w[1] <= w[0] + 1e-10);
    let settled = rows.last().and_then(|r| r.dissipation).is_some_and(|d| d.abs() <= tol);
    Ok(SliceReport {
        tol,
        lambda,
        slices,
        bounded_below_observed: monotone && settled && energies.iter().all(|e| e.is_finite()),
        max_identity_residual,
        sup_scalar: rows.iter().map(|r| (r.t, r.s_max)).collect(),
    })
}
