use std::ops::{Add, Mul, Neg, Sub};
use std::sync::Arc;

use super::grid::{Domain, Grid};
use crate::error::{Result, TfdwError};

/// Real periodic field sampled on the collocation points of a grid.
#[derive(Clone, Debug)]
pub struct ScalarField {
    grid: Arc<Grid>,
    values: Vec<f64>,
}

impl ScalarField {
    pub fn new(grid: Arc<Grid>, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(TfdwError::Structural(format!(
                "field has {} values, grid has {} points",
                values.len(),
                grid.len()
            )));
        }
        Ok(Self { grid, values })
    }

    pub fn zeros(grid: &Arc<Grid>) -> Self {
        Self::constant(grid, 0.0)
    }

    pub fn constant(grid: &Arc<Grid>, c: f64) -> Self {
        Self {
            grid: grid.clone(),
            values: vec![c; grid.len()],
        }
    }

    /// Sample a function of the Cartesian position.
    pub fn from_fn(grid: &Arc<Grid>, f: impl Fn([f64; 3]) -> f64) -> Self {
        let values = (0..grid.len()).map(|i| f(grid.position(i))).collect();
        Self {
            grid: grid.clone(),
            values,
        }
    }

    /// Sample a function of the supercell fractional coordinates in `[0,1)^3`.
    pub fn from_fractional(grid: &Arc<Grid>, f: impl Fn([f64; 3]) -> f64) -> Self {
        let values = (0..grid.len()).map(|i| f(grid.fractional(i))).collect();
        Self {
            grid: grid.clone(),
            values,
        }
    }

    pub fn grid(&self) -> &Arc<Grid> {
        &self.grid
    }

    pub fn domain(&self) -> Domain {
        self.grid.domain()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn ensure_same_grid(&self, other: &ScalarField) -> Result<()> {
        self.grid.ensure_same(&other.grid)
    }

    /// Replace values, keeping the grid.
    pub fn with_values(&self, values: Vec<f64>) -> Self {
        assert_eq!(values.len(), self.values.len());
        Self {
            grid: self.grid.clone(),
            values,
        }
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        self.with_values(self.values.iter().map(|&v| f(v)).collect())
    }

    pub fn zip_map(&self, other: &ScalarField, f: impl Fn(f64, f64) -> f64) -> Result<Self> {
        self.ensure_same_grid(other)?;
        Ok(self.with_values(
            self.values
                .iter()
                .zip(&other.values)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        ))
    }

    /// Arithmetic mean over collocation points (the constant Fourier mode).
    pub fn mean(&self) -> f64 {
        self.values.iter().sum::<f64>() / self.values.len() as f64
    }

    /// Total integral over the supercell.
    pub fn integral(&self) -> f64 {
        self.grid.dv() * self.values.iter().sum::<f64>()
    }

    /// Volume-averaged integral `n^{-3} integral over n Gamma`.
    pub fn avg_integral(&self) -> f64 {
        self.grid.avg_weight() * self.values.iter().sum::<f64>()
    }

    /// Averaged `L^2_n` inner product.
    pub fn inner(&self, other: &ScalarField) -> Result<f64> {
        self.ensure_same_grid(other)?;
        Ok(self.grid.avg_weight() * dot(&self.values, &other.values))
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn min(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max(&self) -> f64 {
        self.values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    pub fn checked_add(&self, other: &ScalarField) -> Result<Self> {
        self.zip_map(other, |a, b| a + b)
    }

    pub fn checked_sub(&self, other: &ScalarField) -> Result<Self> {
        self.zip_map(other, |a, b| a - b)
    }

    pub fn checked_mul(&self, other: &ScalarField) -> Result<Self> {
        self.zip_map(other, |a, b| a * b)
    }

    pub fn scale(&self, c: f64) -> Self {
        self.map(|v| c * v)
    }

    /// Translate by a lattice vector given in unit-cell counts along each axis.
    pub fn translate_cells(&self, shift: [i64; 3]) -> Self {
        let spec = self.grid.spec();
        let dims = self.grid.dims();
        let mut out = vec![0.0; self.values.len()];
        for (i, slot) in out.iter_mut().enumerate() {
            let p = self.grid.unflatten(i);
            let mut q = [0usize; 3];
            for a in 0..3 {
                let off = shift[a] * spec.resolution[a] as i64;
                q[a] = (p[a] as i64 - off).rem_euclid(dims[a] as i64) as usize;
            }
            *slot = self.values[self.grid.flat_index(q)];
        }
        self.with_values(out)
    }

    /// Periodic extension of a unit-cell field onto a supercell grid with the
    /// same resolution.
    pub fn extend_to(&self, supercell: &Arc<Grid>) -> Result<Self> {
        let cell = &self.grid;
        if !cell.spec().is_cell()
            || cell.spec().resolution != supercell.spec().resolution
            || cell.cell_vectors() != supercell.cell_vectors()
        {
            return Err(TfdwError::Structural(
                "periodic extension needs a cell field with matching resolution".into(),
            ));
        }
        let values = (0..supercell.len())
            .map(|i| self.values[cell.flat_index(supercell.cell_point(i))])
            .collect();
        Ok(Self {
            grid: supercell.clone(),
            values,
        })
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

impl PartialEq for ScalarField {
    fn eq(&self, other: &Self) -> bool {
        self.grid.same_as(&other.grid) && self.values == other.values
    }
}

impl Add for &ScalarField {
    type Output = ScalarField;
    fn add(self, rhs: &ScalarField) -> ScalarField {
        self.checked_add(rhs).expect("grid mismatch in field addition")
    }
}

impl Sub for &ScalarField {
    type Output = ScalarField;
    fn sub(self, rhs: &ScalarField) -> ScalarField {
        self.checked_sub(rhs).expect("grid mismatch in field subtraction")
    }
}

impl Mul for &ScalarField {
    type Output = ScalarField;
    fn mul(self, rhs: &ScalarField) -> ScalarField {
        self.checked_mul(rhs).expect("grid mismatch in field product")
    }
}

impl Mul<&ScalarField> for f64 {
    type Output = ScalarField;
    fn mul(self, rhs: &ScalarField) -> ScalarField {
        rhs.scale(self)
    }
}

impl Neg for &ScalarField {
    type Output = ScalarField;
    fn neg(self) -> ScalarField {
        self.scale(-1.0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lattice_grid::GridSpec;

    fn unit() -> [[f64; 3]; 3] {
        [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]]
    }

    #[test]
    fn length_mismatch_is_structural() {
        let g = Grid::new(unit(), GridSpec::cell([4, 4, 4])).unwrap();
        let err = ScalarField::new(g, vec![0.0; 3]).unwrap_err();
        assert_eq!(err.kind(), "structural");
    }

    #[test]
    fn mismatched_grids_rejected() {
        let a = Grid::new(unit(), GridSpec::cell([4, 4, 4])).unwrap();
        let b = Grid::new(unit(), GridSpec::cell([8, 4, 4])).unwrap();
        let fa = ScalarField::constant(&a, 1.0);
        let fb = ScalarField::constant(&b, 1.0);
        assert!(fa.checked_add(&fb).is_err());
        assert!(fa.inner(&fb).is_err());
    }

    #[test]
    fn extension_and_translation() {
        let cell = Grid::new(unit(), GridSpec::cell([8, 1, 1])).unwrap();
        let sup = Grid::new(unit(), GridSpec::chain(8, 3)).unwrap();
        let f = ScalarField::from_fn(&cell, |x| (2.0 * std::f64::consts::PI * x[0]).sin());
        let e = f.extend_to(&sup).unwrap();
        let direct = ScalarField::from_fn(&sup, |x| (2.0 * std::f64::consts::PI * x[0]).sin());
        for (a, b) in e.values().iter().zip(direct.values()) {
            assert!((a - b).abs() < 1e-12);
        }
        let shifted = e.translate_cells([1, 0, 0]);
        for (a, b) in shifted.values().iter().zip(e.values()) {
            assert!((a - b).abs() < 1e-12);
        }
        assert!((e.avg_integral() - f.avg_integral()).abs() < 1e-14);
    }
}
