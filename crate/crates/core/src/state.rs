use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Result, TfdwError};
use crate::lattice_grid::{
    dot, hk_norm, l2_norm, lattice_vector, Background, Grid, GridSpec, LatticeSpec, ScalarField,
};

/// A lattice together with a collocation grid and the sampled background.
#[derive(Clone, Debug)]
pub struct Crystal {
    pub lattice: LatticeSpec,
    pub grid: Arc<Grid>,
    pub rho_b: ScalarField,
}

impl Crystal {
    pub fn new(lattice: LatticeSpec, spec: GridSpec) -> Result<Self> {
        lattice.validate()?;
        let grid = Grid::new(lattice.cell_vectors, spec)?;
        if let Background::Modes { modes } = &lattice.rho_b {
            for m in modes {
                for a in 0..3 {
                    let limit = spec.resolution[a] as i64 / 2;
                    let g = m.g[a] as i64;
                    if (spec.resolution[a] == 1 && g != 0) || (spec.resolution[a] > 1 && g.abs() >= limit) {
                        return Err(TfdwError::Invalid(format!(
                            "background mode {:?} not resolved by resolution {:?}",
                            m.g, spec.resolution
                        )));
                    }
                }
            }
        }
        let rho_b = ScalarField::from_fn(&grid, |x| lattice.rho_b_at(x));
        Ok(Self {
            lattice,
            grid,
            rho_b,
        })
    }

    /// Same lattice and resolution on an `n_1 x n_2 x n_3` supercell.
    pub fn supercell(&self, supercell: [usize; 3]) -> Result<Self> {
        Self::new(self.lattice.clone(), self.grid.spec().with_supercell(supercell))
    }

    pub fn z(&self) -> f64 {
        self.lattice.z
    }

    pub fn cell_volume(&self) -> f64 {
        self.grid.cell_volume()
    }

    pub fn reciprocal(&self) -> [[f64; 3]; 3] {
        self.grid.reciprocal()
    }

    /// Cartesian vector of integer reciprocal coordinates.
    pub fn reciprocal_vector(&self, m: [i32; 3]) -> [f64; 3] {
        lattice_vector(&self.reciprocal(), m)
    }
}

/// A perturbation triple `(omega_+, omega_-, W)` or any field triple.
#[derive(Clone, Debug, PartialEq)]
pub struct Triple {
    pub plus: ScalarField,
    pub minus: ScalarField,
    pub v: ScalarField,
}

impl Triple {
    pub fn new(plus: ScalarField, minus: ScalarField, v: ScalarField) -> Result<Self> {
        plus.ensure_same_grid(&minus)?;
        plus.ensure_same_grid(&v)?;
        Ok(Self { plus, minus, v })
    }

    pub fn zeros(grid: &Arc<Grid>) -> Self {
        let z = ScalarField::zeros(grid);
        Self {
            plus: z.clone(),
            minus: z.clone(),
            v: z,
        }
    }

    pub fn grid(&self) -> &Arc<Grid> {
        self.plus.grid()
    }

    pub fn components(&self) -> [&ScalarField; 3] {
        [&self.plus, &self.minus, &self.v]
    }

    /// `[plus | minus | v]`, length `3N`.
    pub fn to_flat(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(3 * self.plus.len());
        out.extend_from_slice(self.plus.values());
        out.extend_from_slice(self.minus.values());
        out.extend_from_slice(self.v.values());
        out
    }

    pub fn from_flat(grid: &Arc<Grid>, flat: &[f64]) -> Result<Self> {
        let n = grid.len();
        if flat.len() != 3 * n {
            return Err(TfdwError::Structural(format!(
                "flat triple has length {}, expected {}",
                flat.len(),
                3 * n
            )));
        }
        Ok(Self {
            plus: ScalarField::new(grid.clone(), flat[..n].to_vec())?,
            minus: ScalarField::new(grid.clone(), flat[n..2 * n].to_vec())?,
            v: ScalarField::new(grid.clone(), flat[2 * n..].to_vec())?,
        })
    }

    /// Averaged `(L^2_n)^3` inner product.
    pub fn inner(&self, other: &Triple) -> Result<f64> {
        Ok(self.plus.inner(&other.plus)? + self.minus.inner(&other.minus)? + self.v.inner(&other.v)?)
    }

    pub fn l2_norm(&self) -> f64 {
        self.components().iter().map(|f| l2_norm(f).powi(2)).sum::<f64>().sqrt()
    }

    pub fn h2_norm(&self) -> f64 {
        self.components().iter().map(|f| hk_norm(f, 2).powi(2)).sum::<f64>().sqrt()
    }

    pub fn scale(&self, c: f64) -> Triple {
        Triple {
            plus: self.plus.scale(c),
            minus: self.minus.scale(c),
            v: self.v.scale(c),
        }
    }

    pub fn add(&self, other: &Triple) -> Result<Triple> {
        Ok(Triple {
            plus: self.plus.checked_add(&other.plus)?,
            minus: self.minus.checked_add(&other.minus)?,
            v: self.v.checked_add(&other.v)?,
        })
    }

    pub fn sub(&self, other: &Triple) -> Result<Triple> {
        self.add(&other.scale(-1.0))
    }

    pub fn extend_to(&self, supercell: &Arc<Grid>) -> Result<Triple> {
        Ok(Triple {
            plus: self.plus.extend_to(supercell)?,
            minus: self.minus.extend_to(supercell)?,
            v: self.v.extend_to(supercell)?,
        })
    }
}

/// Unknown of every solver: spin amplitudes, mean-zero potential and the
/// additive potential constant carrying the normalization multiplier.
#[derive(Clone, Debug, PartialEq)]
pub struct State {
    pub nu_plus: ScalarField,
    pub nu_minus: ScalarField,
    pub v: ScalarField,
    pub gauge: f64,
}

impl State {
    pub fn new(nu_plus: ScalarField, nu_minus: ScalarField, v: ScalarField, gauge: f64) -> Result<Self> {
        nu_plus.ensure_same_grid(&nu_minus)?;
        nu_plus.ensure_same_grid(&v)?;
        Ok(Self {
            nu_plus,
            nu_minus,
            v,
            gauge,
        })
    }

    /// Constant amplitudes, zero potential.
    pub fn uniform(grid: &Arc<Grid>, nu_plus: f64, nu_minus: f64, gauge: f64) -> Self {
        Self {
            nu_plus: ScalarField::constant(grid, nu_plus),
            nu_minus: ScalarField::constant(grid, nu_minus),
            v: ScalarField::zeros(grid),
            gauge,
        }
    }

    pub fn grid(&self) -> &Arc<Grid> {
        self.nu_plus.grid()
    }

    pub fn rho(&self) -> ScalarField {
        self.nu_plus
            .zip_map(&self.nu_minus, |a, b| a * a + b * b)
            .expect("state fields share a grid")
    }

    pub fn magnetization(&self) -> ScalarField {
        self.nu_plus
            .zip_map(&self.nu_minus, |a, b| a * a - b * b)
            .expect("state fields share a grid")
    }

    /// `n^{-3} integral rho`, electrons per unit cell.
    pub fn electrons_per_cell(&self) -> f64 {
        self.rho().avg_integral()
    }

    /// `n^{-3} integral m`, magnetization per unit cell.
    pub fn magnetization_per_cell(&self) -> f64 {
        self.magnetization().avg_integral()
    }

    pub fn min_nu(&self) -> f64 {
        self.nu_plus.min().min(self.nu_minus.min())
    }

    /// Full potential `V + gauge`.
    pub fn total_potential(&self) -> ScalarField {
        self.v.map(|x| x + self.gauge)
    }

    /// `[nu_+ | nu_- | V + gauge]`.
    pub fn to_flat(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(3 * self.nu_plus.len());
        out.extend_from_slice(self.nu_plus.values());
        out.extend_from_slice(self.nu_minus.values());
        out.extend(self.v.values().iter().map(|x| x + self.gauge));
        out
    }

    /// Inverse of [`State::to_flat`]; the potential mean becomes the gauge.
    pub fn from_flat(grid: &Arc<Grid>, flat: &[f64]) -> Result<Self> {
        let t = Triple::from_flat(grid, flat)?;
        let gauge = t.v.mean();
        let v = t.v.map(|x| x - gauge);
        Ok(Self {
            nu_plus: t.plus,
            nu_minus: t.minus,
            v,
            gauge,
        })
    }

    /// The state as a triple with the gauge folded into the potential.
    pub fn as_triple(&self) -> Triple {
        Triple {
            plus: self.nu_plus.clone(),
            minus: self.nu_minus.clone(),
            v: self.total_potential(),
        }
    }

    /// `self + t` with the mean of `t.v` going into the gauge.
    pub fn add_triple(&self, t: &Triple) -> Result<State> {
        let flat: Vec<f64> = self
            .to_flat()
            .iter()
            .zip(t.to_flat())
            .map(|(a, b)| a + b)
            .collect();
        State::from_flat(self.grid(), &flat)
    }

    /// Difference of two states as a triple (potential including gauges).
    pub fn diff(&self, other: &State) -> Result<Triple> {
        self.as_triple().sub(&other.as_triple())
    }

    /// Rescale the amplitudes so that `n^{-3} integral rho = z`.
    pub fn normalized(&self, z: f64) -> Result<State> {
        let q = self.electrons_per_cell();
        if !(q > 0.0) {
            return Err(TfdwError::Degenerate("cannot normalize a state with zero density".into()));
        }
        let c = (z / q).sqrt();
        Ok(State {
            nu_plus: self.nu_plus.scale(c),
            nu_minus: self.nu_minus.scale(c),
            v: self.v.clone(),
            gauge: self.gauge,
        })
    }

    /// Periodic extension to a supercell grid of the same resolution.
    pub fn extend_to(&self, supercell: &Arc<Grid>) -> Result<State> {
        Ok(State {
            nu_plus: self.nu_plus.extend_to(supercell)?,
            nu_minus: self.nu_minus.extend_to(supercell)?,
            v: self.v.extend_to(supercell)?,
            gauge: self.gauge,
        })
    }

    /// Exchange the spin channels.
    pub fn swap_spins(&self) -> State {
        State {
            nu_plus: self.nu_minus.clone(),
            nu_minus: self.nu_plus.clone(),
            v: self.v.clone(),
            gauge: self.gauge,
        }
    }

    pub fn translate_cells(&self, shift: [i64; 3]) -> State {
        State {
            nu_plus: self.nu_plus.translate_cells(shift),
            nu_minus: self.nu_minus.translate_cells(shift),
            v: self.v.translate_cells(shift),
            gauge: self.gauge,
        }
    }

    /// Averaged `(L^2_n)^2` inner product of the amplitude pair with another.
    pub fn nu_inner(&self, other: &State) -> f64 {
        let w = self.grid().avg_weight();
        w * (dot(self.nu_plus.values(), other.nu_plus.values())
            + dot(self.nu_minus.values(), other.nu_minus.values()))
    }
}

/// How a solve was initialized; recorded in manifests.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "preset", rename_all = "snake_case", deny_unknown_fields)]
pub enum InitPreset {
    /// `nu_+ = nu_- = sqrt(Z / (2 |cell|))`.
    Uniform,
    /// Uniform plus a seeded smooth perturbation, identical in both channels.
    UniformPlusNoise { seed: u64, amplitude: f64 },
}

#[cfg(test)]
mod tests {
    use super::*;

    fn crystal() -> Crystal {
        Crystal::new(LatticeSpec::modulated_chain(0.4, 0.2).unwrap(), GridSpec::cell([8, 1, 1])).unwrap()
    }

    #[test]
    fn flat_round_trip_moves_mean_to_gauge() {
        let c = crystal();
        let g = &c.grid;
        let v = ScalarField::from_fn(g, |x| (2.0 * std::f64::consts::PI * x[0]).sin());
        let s = State::new(ScalarField::constant(g, 0.4), ScalarField::constant(g, 0.3), v, 0.7).unwrap();
        let back = State::from_flat(g, &s.to_flat()).unwrap();
        assert!((back.gauge - 0.7).abs() < 1e-14);
        assert!(back.v.mean().abs() < 1e-14);
    }

    #[test]
    fn normalization_hits_target() {
        let c = crystal();
        let s = State::uniform(&c.grid, 1.0, 0.5, 0.0).normalized(c.z()).unwrap();
        assert!((s.electrons_per_cell() - c.z()).abs() < 1e-14);
    }

    #[test]
    fn unresolved_background_rejected() {
        let err = Crystal::new(LatticeSpec::modulated_chain(0.4, 0.2).unwrap(), GridSpec::cell([4, 4, 4]));
        assert!(err.is_ok());
        let lat = LatticeSpec {
            cell_vectors: [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]],
            z: 1.0,
            rho_b: Background::Modes {
                modes: vec![crate::lattice_grid::BackgroundMode { g: [0, 1, 0], re: 0.1, im: 0.0 }],
            },
        };
        assert!(Crystal::new(lat, GridSpec::cell([8, 1, 1])).is_err());
    }
}
