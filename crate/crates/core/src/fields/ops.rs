//! Quadrature and Fourier-multiplier differential operators.
//!
//! The Laplacian has symbol `-|ξ|²` (negative semidefinite). First
//! derivatives drop the Nyquist mode of the differentiated axis, whose
//! derivative is not representable as a real grid function.

use rustfft::num_complex::Complex64;

use crate::fields::{CovectorField, ScalarField};

/// `∫ phi dμ` over the unit-volume torus (periodic trapezoid rule).
pub fn integrate(phi: &ScalarField) -> f64 {
    pairwise_sum(phi.values()) * phi.grid().cell_volume()
}

/// Pairwise summation; exact for a constant slice whose length is a power
/// of two.
pub(crate) fn pairwise_sum(v: &[f64]) -> f64 {
    const LEAF: usize = 32;
    if v.len() > LEAF {
        let (a, b) = v.split_at(v.len() / 2);
        return pairwise_sum(a) + pairwise_sum(b);
    }
    let mut buf = [0.0; LEAF];
    buf[..v.len()].copy_from_slice(v);
    let mut len = v.len();
    while len > 1 {
        let half = len / 2;
        for i in 0..half {
            buf[i] = buf[2 * i] + buf[2 * i + 1];
        }
        if len % 2 == 1 {
            buf[half] = buf[len - 1];
            len = half + 1;
        } else {
            len = half;
        }
    }
    buf[0]
}

/// Integral of the pointwise product, without materializing it.
pub fn integrate_product(a: &ScalarField, b: &ScalarField) -> f64 {
    a.inner(b)
}

/// Forward transform, exposed for diagnostics and tests.
pub fn forward(phi: &ScalarField) -> Vec<Complex64> {
    phi.grid().plan().forward(phi.values())
}

/// Inverse of [`forward`].
pub fn inverse(phi_like: &ScalarField, spec: Vec<Complex64>) -> ScalarField {
    let grid = phi_like.grid();
    let values = grid.plan().inverse(spec, grid.len());
    ScalarField::from_values(grid, values).expect("inverse transform has grid length")
}

/// Multiplies every Fourier mode of `phi` by a real symbol.
pub fn apply_real_symbol(phi: &ScalarField, symbol: impl Fn(usize) -> f64) -> ScalarField {
    let grid = phi.grid();
    let mut out = vec![0.0; grid.len()];
    grid.plan().multiply_real(phi.values(), symbol, &mut out);
    ScalarField::from_values(grid, out).expect("multiplier preserves the grid length")
}

pub fn laplacian(phi: &ScalarField) -> ScalarField {
    let grid = phi.grid();
    let mut out = vec![0.0; grid.len()];
    grid.plan().laplacian(phi.values(), &mut out);
    ScalarField::from_values(grid, out).expect("multiplier preserves the grid length")
}

/// Partial derivative along real coordinate `axis`.
pub fn partial(phi: &ScalarField, axis: usize) -> ScalarField {
    let plan = phi.grid().plan();
    let mut spec = forward(phi);
    let mut idx = vec![0usize; plan.spec_shape.len()];
    for (m, c) in spec.iter_mut().enumerate() {
        plan.spec_index(m, &mut idx);
        let j = idx[axis];
        *c = if plan.nyquist[axis][j] {
            Complex64::new(0.0, 0.0)
        } else {
            *c * Complex64::new(0.0, plan.wavenumbers[axis][j])
        };
    }
    inverse(phi, spec)
}

pub fn gradient(phi: &ScalarField) -> CovectorField {
    let grid = phi.grid();
    let components = (0..grid.real_dim()).map(|a| partial(phi, a)).collect();
    CovectorField::new(grid, components).expect("gradient components share the grid")
}

/// Pointwise Euclidean inner product of two covector fields.
pub fn pairing(a: &CovectorField, b: &CovectorField) -> ScalarField {
    let mut out = ScalarField::zeros(a.grid());
    for (ca, cb) in a.components().iter().zip(b.components()) {
        for ((o, x), y) in out.values_mut().iter_mut().zip(ca.values()).zip(cb.values()) {
            *o += x * y;
        }
    }
    out
}

/// Spectral divergence `Σ ∂_i θ_i`.
pub fn divergence(theta: &CovectorField) -> ScalarField {
    let mut out = ScalarField::zeros(theta.grid());
    for (axis, c) in theta.components().iter().enumerate() {
        out.axpy(1.0, &partial(c, axis));
    }
    out
}

/// Mean-zero solution of `Δu = rhs - mean(rhs)`.
pub fn inverse_laplacian(rhs: &ScalarField) -> ScalarField {
    let plan = rhs.grid().plan();
    apply_real_symbol(rhs, |m| {
        let s = plan.laplace_symbol[m];
        if s == 0.0 {
            0.0
        } else {
            1.0 / s
        }
    })
}

/// Solves `(1 - coeff Δ) u = rhs` exactly in Fourier space.
pub fn solve_helmholtz(rhs: &ScalarField, coeff: f64) -> ScalarField {
    let plan = rhs.grid().plan();
    apply_real_symbol(rhs, |m| 1.0 / (1.0 - coeff * plan.laplace_symbol[m]))
}

/// Zeroes every mode with `|k_i| > N_i/3` on some axis (2/3 rule).
pub fn dealias(phi: &ScalarField) -> ScalarField {
    let plan = phi.grid().plan();
    apply_real_symbol(phi, |m| if plan.max_relative_k[m] > 2.0 / 3.0 { 0.0 } else { 1.0 })
}
