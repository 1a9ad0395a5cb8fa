use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::fields::TorusGrid;

/// Real-valued grid function on a [`TorusGrid`].
#[derive(Clone, Debug)]
pub struct ScalarField {
    grid: Arc<TorusGrid>,
    values: Vec<f64>,
}

impl ScalarField {
    pub fn from_values(grid: &Arc<TorusGrid>, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(Error::GridMismatch(format!(
                "{} values for a grid of {} points",
                values.len(),
                grid.len()
            )));
        }
        Ok(ScalarField {
            grid: Arc::clone(grid),
            values,
        })
    }

    pub fn constant(grid: &Arc<TorusGrid>, c: f64) -> Self {
        ScalarField {
            grid: Arc::clone(grid),
            values: vec![c; grid.len()],
        }
    }

    pub fn zeros(grid: &Arc<TorusGrid>) -> Self {
        Self::constant(grid, 0.0)
    }

    /// Samples `func` at every grid point (coordinates in physical units).
    pub fn from_fn(grid: &Arc<TorusGrid>, func: impl Fn(&[f64]) -> f64) -> Self {
        let mut idx = vec![0usize; grid.real_dim()];
        let mut x = vec![0.0; grid.real_dim()];
        let values = (0..grid.len())
            .map(|flat| {
                grid.unravel(flat, &mut idx);
                for (a, xa) in x.iter_mut().enumerate() {
                    *xa = idx[a] as f64 * grid.spacing(a);
                }
                func(&x)
            })
            .collect();
        ScalarField {
            grid: Arc::clone(grid),
            values,
        }
    }

    /// Sum of `terms` random Fourier modes with every wavenumber `|k_i| ≤ max_mode`,
    /// drawn deterministically from `seed`.
    ///
    /// `max_mode` is clamped below the Nyquist index of each axis, so the
    /// field is exactly resolved by the grid.
    pub fn random_band_limited(grid: &Arc<TorusGrid>, max_mode: usize, terms: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let dim = grid.real_dim();
        let modes: Vec<(Vec<f64>, f64, f64)> = (0..terms)
            .map(|_| {
                let xi = (0..dim)
                    .map(|a| {
                        let top = max_mode.min(grid.resolution()[a] / 2 - 1) as i64;
                        let k = rng.gen_range(-top..=top) as f64;
                        2.0 * std::f64::consts::PI * k / grid.periods()[a]
                    })
                    .collect();
                (xi, rng.gen_range(-1.0..1.0), rng.gen_range(0.0..std::f64::consts::TAU))
            })
            .collect();
        Self::from_fn(grid, |x| {
            modes
                .iter()
                .map(|(xi, amp, phase)| {
                    let arg: f64 = xi.iter().zip(x).map(|(k, v)| k * v).sum();
                    amp * (arg + phase).cos()
                })
                .sum()
        })
    }

    pub fn grid(&self) -> &Arc<TorusGrid> {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    pub fn ensure_finite(&self, what: &'static str) -> Result<()> {
        if self.is_finite() {
            Ok(())
        } else {
            Err(Error::NonFinite(what))
        }
    }

    pub fn check_same_grid(&self, other: &ScalarField) -> Result<()> {
        if self.grid.same_as(&other.grid) {
            Ok(())
        } else {
            Err(Error::GridMismatch(format!("{:?} vs {:?}", self.grid, other.grid)))
        }
    }

    pub fn map(&self, op: impl Fn(f64) -> f64) -> Self {
        ScalarField {
            grid: Arc::clone(&self.grid),
            values: self.values.iter().map(|&v| op(v)).collect(),
        }
    }

    /// Pointwise combination; panics if the grids differ in size.
    pub fn zip_map(&self, other: &ScalarField, op: impl Fn(f64, f64) -> f64) -> Self {
        assert_eq!(self.values.len(), other.values.len(), "fields on different grids");
        ScalarField {
            grid: Arc::clone(&self.grid),
            values: self
                .values
                .iter()
                .zip(&other.values)
                .map(|(&a, &b)| op(a, b))
                .collect(),
        }
    }

    pub fn add(&self, other: &ScalarField) -> Self {
        self.zip_map(other, |a, b| a + b)
    }

    pub fn sub(&self, other: &ScalarField) -> Self {
        self.zip_map(other, |a, b| a - b)
    }

    pub fn mul(&self, other: &ScalarField) -> Self {
        self.zip_map(other, |a, b| a * b)
    }

    pub fn scale(&self, s: f64) -> Self {
        self.map(|v| s * v)
    }

    pub fn shift(&self, c: f64) -> Self {
        self.map(|v| v + c)
    }

    /// `self += s * other`
    pub fn axpy(&mut self, s: f64, other: &ScalarField) {
        for (a, b) in self.values.iter_mut().zip(&other.values) {
            *a += s * b;
        }
    }

    pub fn min(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max(&self) -> f64 {
        self.values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    /// Sup norm.
    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// `‖self - other‖_∞`
    pub fn max_abs_diff(&self, other: &ScalarField) -> f64 {
        self.values
            .iter()
            .zip(&other.values)
            .fold(0.0, |m, (a, b)| m.max((a - b).abs()))
    }

    /// L² norm with respect to the normalized measure.
    pub fn l2_norm(&self) -> f64 {
        self.inner(self).sqrt()
    }

    /// L² inner product with respect to the normalized measure.
    pub fn inner(&self, other: &ScalarField) -> f64 {
        let s: f64 = self.values.iter().zip(&other.values).map(|(a, b)| a * b).sum();
        s * self.grid.cell_volume()
    }
}

/// A 1-form on the torus stored as one scalar component per real coordinate.
#[derive(Clone, Debug)]
pub struct CovectorField {
    grid: Arc<TorusGrid>,
    components: Vec<ScalarField>,
}

impl CovectorField {
    pub fn new(grid: &Arc<TorusGrid>, components: Vec<ScalarField>) -> Result<Self> {
        if components.len() != grid.real_dim() {
            return Err(Error::GridMismatch(format!(
                "{} covector components for {} coordinates",
                components.len(),
                grid.real_dim()
            )));
        }
        for c in &components {
            if !c.grid().same_as(grid) {
                return Err(Error::GridMismatch("covector component on a different grid".into()));
            }
        }
        Ok(CovectorField {
            grid: Arc::clone(grid),
            components,
        })
    }

    pub fn zeros(grid: &Arc<TorusGrid>) -> Self {
        CovectorField {
            grid: Arc::clone(grid),
            components: (0..grid.real_dim()).map(|_| ScalarField::zeros(grid)).collect(),
        }
    }

    pub fn grid(&self) -> &Arc<TorusGrid> {
        &self.grid
    }

    pub fn components(&self) -> &[ScalarField] {
        &self.components
    }

    pub fn component(&self, axis: usize) -> &ScalarField {
        &self.components[axis]
    }

    pub fn is_zero(&self) -> bool {
        self.components.iter().all(|c| c.values().iter().all(|&v| v == 0.0))
    }

    pub fn is_finite(&self) -> bool {
        self.components.iter().all(ScalarField::is_finite)
    }

    pub fn max_abs(&self) -> f64 {
        self.components.iter().map(ScalarField::max_abs).fold(0.0, f64::max)
    }
}
