//! Lattices, periodic collocation grids, spectral calculus and averaged norms.

mod field;
mod grid;
mod lattice;
mod norms;
mod spectral;
pub mod tfw;

pub use field::ScalarField;
pub use grid::{Domain, Grid, GridSpec};
pub use lattice::{Background, BackgroundMode, LatticeSpec};
pub use norms::{hk_norm, l2_norm, lp_norm, multi_indices, norm, product_norm, Space};
pub use spectral::{
    derivative, hminus1_inner, laplacian, poisson_solve, transform, Direction, Representation,
    SpectralField,
};

pub(crate) use field::dot;
pub(crate) use lattice::{dot as dot3, lattice_vector};
pub(crate) use spectral::{hminus1_inner_unchecked, inverse_neg_laplacian};
