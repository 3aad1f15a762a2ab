//! Pseudo-spectral solvers for the spin-polarized Thomas-Fermi-Dirac-von
//! Weizsaecker model on periodic crystals.

pub mod eigen;
pub mod cauchy_born;
pub mod cell;
pub mod convergence;
pub mod energy;
pub mod error;
pub mod jellium;
pub mod krylov;
pub mod lattice_grid;
pub mod linop;
pub mod newton;
pub mod output;
pub mod residual;
pub mod spline;
pub mod state;
pub mod study;
pub mod two_scale;

pub use error::{Result, TfdwError};
