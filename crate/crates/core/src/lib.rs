//! Space-time finite elements for stochastic p-Laplace equations.
//!
//! The pipeline: a [`mesh::Mesh`] is assembled into [`fem::FemOperators`];
//! [`stochastics`] provides Brownian paths and time grids; each implicit
//! Euler step is a convex minimization solved in [`psolver`]; [`stepper`]
//! runs whole trajectories; [`analysis`] turns nested trajectory pairs into
//! error estimates and convergence rates; [`experiment`] orchestrates the
//! Monte-Carlo study and writes its artifacts.

pub mod analysis;
pub mod config;
pub mod constitutive;
pub mod error;
pub mod experiment;
pub mod fem;
pub mod mesh;
pub mod plot;
pub mod psolver;
pub mod stepper;
pub mod stochastics;

pub use error::{Error, Result};
