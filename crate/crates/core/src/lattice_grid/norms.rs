use serde::{Deserialize, Serialize};

use super::field::ScalarField;
use super::spectral::{derivative, hminus1_inner};
use crate::error::Result;

/// Function spaces with averaged norms.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "space", rename_all = "snake_case")]
pub enum Space {
    /// `(n^{-3} integral |f|^p)^{1/p}`; `p = inf` gives the sup norm.
    Lp { p: f64 },
    /// Sum of `L^2_n` norms of all Cartesian derivatives of order `<= k`.
    Hk { k: u32 },
    /// Coulomb norm; requires zero mean.
    Hminus1,
}

impl Space {
    pub const L2: Space = Space::Lp { p: 2.0 };
    pub const H2: Space = Space::Hk { k: 2 };
}

/// All multi-indices `alpha` with `|alpha| = order`.
pub fn multi_indices(order: u32) -> Vec<[u32; 3]> {
    let mut out = Vec::new();
    for a in (0..=order).rev() {
        for b in (0..=order - a).rev() {
            out.push([a, b, order - a - b]);
        }
    }
    out
}

pub fn lp_norm(f: &ScalarField, p: f64) -> f64 {
    if p.is_infinite() {
        return f.max_abs();
    }
    let w = f.grid().avg_weight();
    let s: f64 = f.values().iter().map(|v| v.abs().powf(p)).sum();
    (w * s).powf(1.0 / p)
}

pub fn l2_norm(f: &ScalarField) -> f64 {
    let w = f.grid().avg_weight();
    (w * f.values().iter().map(|v| v * v).sum::<f64>()).sqrt()
}

pub fn hk_norm(f: &ScalarField, k: u32) -> f64 {
    let mut total = 0.0;
    for order in 0..=k {
        for alpha in multi_indices(order) {
            // derivatives along flat axes vanish identically; skip the FFT
            let flat = (0..3).any(|a| alpha[a] > 0 && !axis_active(f, a));
            if flat && order > 0 {
                continue;
            }
            total += l2_norm(&derivative(f, alpha));
        }
    }
    total
}

/// True unless the Cartesian direction is orthogonal to every resolved axis.
fn axis_active(f: &ScalarField, d: usize) -> bool {
    let grid = f.grid();
    let dims = grid.dims();
    let b = grid.reciprocal();
    (0..3).any(|a| dims[a] > 1 && b[a][d].abs() > 1e-300)
}

pub fn norm(f: &ScalarField, space: Space) -> Result<f64> {
    match space {
        Space::Lp { p } => Ok(lp_norm(f, p)),
        Space::Hk { k } => Ok(hk_norm(f, k)),
        Space::Hminus1 => Ok(hminus1_inner(f, f)?.max(0.0).sqrt()),
    }
}

/// Euclidean combination of component norms, `(X)^3`-style.
pub fn product_norm(fields: &[&ScalarField], space: Space) -> Result<f64> {
    let mut s = 0.0;
    for f in fields {
        let v = norm(f, space)?;
        s += v * v;
    }
    Ok(s.sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lattice_grid::{Grid, GridSpec};
    use std::f64::consts::PI;

    const UNIT: [[f64; 3]; 3] = [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]];

    #[test]
    fn multi_index_counts() {
        assert_eq!(multi_indices(0).len(), 1);
        assert_eq!(multi_indices(1).len(), 3);
        assert_eq!(multi_indices(2).len(), 6);
    }

    #[test]
    fn constant_l2_is_abs_value() {
        let g = Grid::new(UNIT, GridSpec::cell([4, 4, 4])).unwrap();
        let f = ScalarField::constant(&g, -2.5);
        assert!((l2_norm(&f) - 2.5).abs() < 1e-14);
        assert!((lp_norm(&f, 3.0) - 2.5).abs() < 1e-13);
        assert!((hk_norm(&f, 2) - 2.5).abs() < 1e-13);
    }

    #[test]
    fn cosine_l2_independent_of_n() {
        for n in [1, 2, 5] {
            let g = Grid::new(UNIT, GridSpec { resolution: [8, 4, 4], supercell: [n, 1, 1] }).unwrap();
            let f = ScalarField::from_fn(&g, |x| (2.0 * PI * x[0]).cos());
            assert!((l2_norm(&f) - 0.5f64.sqrt()).abs() < 1e-14);
        }
    }

    #[test]
    fn h1_norm_of_cosine() {
        let g = Grid::new(UNIT, GridSpec::cell([8, 4, 4])).unwrap();
        let f = ScalarField::from_fn(&g, |x| (2.0 * PI * x[0]).cos());
        let expect = 0.5f64.sqrt() * (1.0 + 2.0 * PI);
        assert!((hk_norm(&f, 1) - expect).abs() < 1e-11);
    }
}
