//! Helmholtz workbench: GRF sound-speed media, 1D and 2D FDFD reference
//! solvers, a small conditional diffusion surrogate with its samplers, a
//! regressor baseline, and the sensitivity study. `cli` wires the stages
//! into the `helmdiff` binary.

pub mod cli;
pub mod config;
pub mod diffusion;
pub mod error;
pub mod fields;
pub mod grid;
pub mod metrics;
pub mod nn;
pub mod pipeline;
pub mod plot;
pub mod rng;
pub mod schedules;
pub mod sensitivity;
pub mod solver1d;
pub mod solver2d;
pub mod spectral;
pub mod store;

pub use error::{Error, Result};
pub use grid::{CoefficientField, Shape};
