//! Numerical laboratory for the linear Boltzmann limit of a quantum particle
//! in a Gaussian random field.
//!
//! The classical side (phase grids, collision operators, Trotter schemes) and
//! the quantum side (Weyl quantization, coherent-state dynamics, sampled
//! fields) are exposed as separate modules; the `kinlab` binary drives the
//! standard experiments.

pub mod boltzmann_evolver;
pub mod canon;
pub mod coherent_dynamics;
pub mod collision_ops;
pub mod error;
pub mod experiment_cli;
pub mod expm;
pub mod field_montecarlo;
pub mod kinetic_grid;
pub mod quadrature;
pub mod spectral;
pub mod stats;
pub mod weyl_semiclassics;

pub use error::{LabError, Result};
