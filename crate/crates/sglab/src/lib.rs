//! Simulation and verification lab for the truncated, renormalised hyperbolic
//! sine-Gordon model on the two-dimensional torus.
//!
//! The crate builds every stochastic object of the model — Gaussian data,
//! damped stochastic convolutions, the imaginary multiplicative chaos, the
//! Gibbs density and the truncated dynamics — on a truncated Fourier lattice,
//! and provides numerical probes of the covariance laws, moment and kernel
//! bounds that govern the model.

pub mod chaos;
pub mod cli;
pub mod dynamics;
pub mod error;
pub mod function_norms;
pub mod kernel_lab;
pub mod quad;
pub mod random_fields;
pub mod spectral_torus;
pub mod stats;
pub mod stochastic_convolution;

pub use error::{LabError, Result};
