//! Numerical workbench for log-Sobolev inequalities of lattice spin systems
//! with power-law phase and non-quadratic nearest-neighbour interactions.

pub mod cli;
pub mod dynamics;
pub mod error;
pub mod functionals;
pub mod inequalities;
pub mod measures;
pub mod model;
pub mod quadrature;

pub use error::{Error, Result};
