//! Drivers reproducing the constructions around the flow: the unbounded
//! bump family, the saddle instability, the C⁰ certificate and slice
//! extraction.

pub mod bump;
pub mod c0;
pub mod saddle;
pub mod slices;

pub use bump::{bump_family, unboundedness_sweep, BumpProfile, RadialOracle, SweepRow};
pub use c0::{c0_certificate, c0_trajectory, C0Certificate, C0Row, C0Stepper};
pub use saddle::{saddle_experiment, SaddleConfig, SaddleReport, SaddleRow};
pub use slices::{palais_smale_extract, Slice, SliceReport};
