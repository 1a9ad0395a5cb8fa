//! Pseudospectral simulation of the Chern-Yamabe flow on flat complex tori.
//!
//! The flow `∂f/∂t = (n/2)(λ - S)` evolves the conformal factor of a
//! Gauduchon background towards constant Chern scalar curvature. Alongside
//! the integrator the crate evaluates the balanced-case energy functional,
//! its second variation, and diagnostics for the conserved quantities and
//! maximum-principle bounds of the flow.

pub mod error;
pub mod experiments;
pub mod fields;
pub mod flow;
pub mod geometry;
pub mod variational;

pub use error::{Error, Result};
