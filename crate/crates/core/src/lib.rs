//! Online parameter estimation and optimal sensor placement for a partially
//! observed linear stochastic advection-diffusion equation on the unit torus.
//!
//! The field is projected onto a truncated real Fourier basis, filtered with a
//! continuous-discrete Kalman filter, and the unknown parameters and movable
//! sensor locations are updated by a two-timescale stochastic gradient scheme
//! driven by the exact tangent of the filter recursion.

pub mod cli_io;
pub mod conditions;
pub mod error;
pub mod experiments;
pub mod kalman;
pub mod linalg;
pub mod objectives;
pub mod optimizer;
pub mod signal_sim;
pub mod spectral_model;
pub mod tangent;

pub use error::{Error, Result};
