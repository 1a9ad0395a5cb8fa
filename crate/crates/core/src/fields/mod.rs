//! Periodic grid fields on flat tori and their spectral calculus.

mod grid;
mod ops;
mod scalar;
pub mod snapshot;

pub use grid::TorusGrid;
pub use ops::{
    apply_real_symbol, dealias, divergence, forward, gradient, integrate, integrate_product,
    inverse, inverse_laplacian, laplacian, pairing, partial, solve_helmholtz,
};
pub use scalar::{CovectorField, ScalarField};
