use serde::{Deserialize, Serialize};

use crate::error::{Result, TfdwError};

/// One Fourier component of a smooth periodic background.
///
/// The listed mode contributes `2 Re[(re + i im) exp(i G.x)]`, so the
/// conjugate partner at `-G` is implied and the background stays real.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BackgroundMode {
    /// Integer coordinates of `G` in the reciprocal basis of the unit cell.
    pub g: [i32; 3],
    pub re: f64,
    #[serde(default)]
    pub im: f64,
}

/// Charge background of nuclei plus core electrons.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Background {
    /// Uniform background (jellium). Must equal `Z / |cell|`.
    Constant { value: f64 },
    /// Mean `Z / |cell|` plus a finite list of non-zero modes.
    Modes { modes: Vec<BackgroundMode> },
}

/// Bravais lattice, electron count per cell and background charge.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LatticeSpec {
    /// Rows are the primitive vectors `a_1, a_2, a_3`.
    pub cell_vectors: [[f64; 3]; 3],
    /// Electrons per unit cell.
    pub z: f64,
    pub rho_b: Background,
}

impl LatticeSpec {
    /// Cubic cell of the given side with a validated background.
    pub fn cubic(side: f64, z: f64, rho_b: Background) -> Result<Self> {
        let spec = Self {
            cell_vectors: [[side, 0.0, 0.0], [0.0, side, 0.0], [0.0, 0.0, side]],
            z,
            rho_b,
        };
        spec.validate()?;
        Ok(spec)
    }

    /// Unit cube carrying the neutral jellium background for `nu0`.
    pub fn jellium(nu0: f64) -> Result<Self> {
        let rho = 2.0 * nu0 * nu0;
        Self::cubic(1.0, rho, Background::Constant { value: rho })
    }

    /// Unit cube with a single cosine modulation along the first axis:
    /// `rho_b(z) = Z (1 + amplitude cos(2 pi z_1))`.
    pub fn modulated_chain(z: f64, amplitude: f64) -> Result<Self> {
        Self::chain(1.0, z, amplitude)
    }

    /// Cell `period x 1 x 1` with background
    /// `rho_b = (Z/|Gamma|)(1 + amplitude cos(2 pi z_1 / period))`.
    pub fn chain(period: f64, z: f64, amplitude: f64) -> Result<Self> {
        let spec = Self {
            cell_vectors: [[period, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]],
            z,
            rho_b: Background::Modes {
                modes: vec![BackgroundMode {
                    g: [1, 0, 0],
                    re: 0.5 * amplitude * z / period,
                    im: 0.0,
                }],
            },
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        let det = det3(&self.cell_vectors);
        if !(det > 0.0) {
            return Err(TfdwError::Invalid(format!(
                "cell vectors must be right-handed with positive volume, det = {det}"
            )));
        }
        if !(self.z > 0.0) || !self.z.is_finite() {
            return Err(TfdwError::Invalid(format!("Z must be positive, got {}", self.z)));
        }
        match &self.rho_b {
            Background::Constant { value } => {
                let expected = self.z / det;
                if (value - expected).abs() > 1e-12 * expected.abs().max(1.0) {
                    return Err(TfdwError::Invalid(format!(
                        "constant background {value} inconsistent with Z/|cell| = {expected}"
                    )));
                }
            }
            Background::Modes { modes } => {
                for m in modes {
                    if m.g == [0, 0, 0] {
                        return Err(TfdwError::Invalid(
                            "background mode list may not contain G = 0; the mean is fixed by Z"
                                .into(),
                        ));
                    }
                    if !m.re.is_finite() || !m.im.is_finite() {
                        return Err(TfdwError::Invalid("non-finite background amplitude".into()));
                    }
                }
            }
        }
        Ok(())
    }

    pub fn volume(&self) -> f64 {
        det3(&self.cell_vectors)
    }

    /// Rows are `b_j` with `a_i . b_j = 2 pi delta_ij`.
    pub fn reciprocal(&self) -> [[f64; 3]; 3] {
        reciprocal_rows(&self.cell_vectors)
    }

    pub fn mean_background(&self) -> f64 {
        self.z / self.volume()
    }

    /// Background density at a Cartesian point.
    pub fn rho_b_at(&self, x: [f64; 3]) -> f64 {
        let mean = self.mean_background();
        match &self.rho_b {
            Background::Constant { .. } => mean,
            Background::Modes { modes } => {
                let b = self.reciprocal();
                modes.iter().fold(mean, |acc, m| {
                    let g = lattice_vector(&b, m.g);
                    let phase = dot(&g, &x);
                    acc + 2.0 * (m.re * phase.cos() - m.im * phase.sin())
                })
            }
        }
    }

    /// True when swapping spin channels leaves the model invariant. The
    /// background never distinguishes spins in the collinear model.
    pub fn spin_symmetric(&self) -> bool {
        true
    }
}

pub(crate) fn det3(a: &[[f64; 3]; 3]) -> f64 {
    a[0][0] * (a[1][1] * a[2][2] - a[1][2] * a[2][1])
        - a[0][1] * (a[1][0] * a[2][2] - a[1][2] * a[2][0])
        + a[0][2] * (a[1][0] * a[2][1] - a[1][1] * a[2][0])
}

pub(crate) fn reciprocal_rows(a: &[[f64; 3]; 3]) -> [[f64; 3]; 3] {
    let two_pi = 2.0 * std::f64::consts::PI;
    let det = det3(a);
    // b_1 = 2 pi (a_2 x a_3) / det, cyclic
    let cross = |u: &[f64; 3], v: &[f64; 3]| {
        [
            u[1] * v[2] - u[2] * v[1],
            u[2] * v[0] - u[0] * v[2],
            u[0] * v[1] - u[1] * v[0],
        ]
    };
    let mut b = [[0.0; 3]; 3];
    for i in 0..3 {
        let c = cross(&a[(i + 1) % 3], &a[(i + 2) % 3]);
        for d in 0..3 {
            b[i][d] = two_pi * c[d] / det;
        }
    }
    b
}

pub(crate) fn lattice_vector(basis: &[[f64; 3]; 3], m: [i32; 3]) -> [f64; 3] {
    let mut v = [0.0; 3];
    for (a, row) in basis.iter().enumerate() {
        for d in 0..3 {
            v[d] += m[a] as f64 * row[d];
        }
    }
    v
}

pub(crate) fn dot(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reciprocal_is_dual_basis() {
        let a = [[1.0, 0.2, 0.0], [0.0, 1.3, 0.1], [0.3, 0.0, 0.9]];
        let b = reciprocal_rows(&a);
        for i in 0..3 {
            for j in 0..3 {
                let expect = if i == j { 2.0 * std::f64::consts::PI } else { 0.0 };
                assert!((dot(&a[i], &b[j]) - expect).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn rejects_inconsistent_constant_background() {
        let err = LatticeSpec::cubic(1.0, 2.0, Background::Constant { value: 1.0 });
        assert!(err.is_err());
    }

    #[test]
    fn rejects_left_handed_cell() {
        let spec = LatticeSpec {
            cell_vectors: [[0.0, 1.0, 0.0], [1.0, 0.0, 0.0], [0.0, 0.0, 1.0]],
            z: 1.0,
            rho_b: Background::Modes { modes: vec![] },
        };
        assert!(spec.validate().is_err());
    }

    #[test]
    fn modulated_background_has_mean_z() {
        let spec = LatticeSpec::modulated_chain(0.5, 0.3).unwrap();
        let n = 64;
        let mean: f64 = (0..n)
            .map(|i| spec.rho_b_at([i as f64 / n as f64, 0.0, 0.0]))
            .sum::<f64>()
            / n as f64;
        assert!((mean - 0.5).abs() < 1e-14);
        assert!((spec.rho_b_at([0.0, 0.0, 0.0]) - 0.5 * 1.3).abs() < 1e-14);
    }
}
