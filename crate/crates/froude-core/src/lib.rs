//! Spectral simulation and verification toolkit for the stratified
//! Boussinesq system on an anisotropic periodic box, including its fast
//! wave filter, resonant limit dynamics and Littlewood–Paley diagnostics.

pub mod error;
pub mod torus_spectral;
pub mod wave_basis;
pub mod littlewood_paley;
pub mod resonance;
pub mod bilinear_forms;
pub mod solvers;
pub mod harness;

pub use error::{Error, Result};
