use std::fmt;
use std::sync::Arc;

use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use super::lattice::{det3, reciprocal_rows};
use crate::error::{Result, TfdwError};

/// Collocation resolution per unit-cell axis and the supercell factor.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct GridSpec {
    /// Points per unit cell along each axis. Either an even number `>= 4`,
    /// or `1` for a flat axis along which every field is constant.
    pub resolution: [usize; 3],
    /// Number of unit cells along each axis.
    pub supercell: [usize; 3],
}

impl GridSpec {
    pub fn cell(resolution: [usize; 3]) -> Self {
        Self {
            resolution,
            supercell: [1, 1, 1],
        }
    }

    /// `n` cells along the first axis, flat along the other two.
    pub fn chain(points_per_cell: usize, n: usize) -> Self {
        Self {
            resolution: [points_per_cell, 1, 1],
            supercell: [n, 1, 1],
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (axis, &r) in self.resolution.iter().enumerate() {
            if r != 1 && (r < 4 || r % 2 != 0) {
                return Err(TfdwError::Invalid(format!(
                    "resolution along axis {axis} must be even and >= 4 (or 1 for a flat axis), got {r}"
                )));
            }
        }
        if self.supercell.contains(&0) {
            return Err(TfdwError::Invalid("supercell factors must be positive".into()));
        }
        Ok(())
    }

    pub fn dims(&self) -> [usize; 3] {
        [
            self.resolution[0] * self.supercell[0],
            self.resolution[1] * self.supercell[1],
            self.resolution[2] * self.supercell[2],
        ]
    }

    pub fn total_points(&self) -> usize {
        self.dims().iter().product()
    }

    pub fn cell_count(&self) -> usize {
        self.supercell.iter().product()
    }

    pub fn is_cell(&self) -> bool {
        self.supercell == [1, 1, 1]
    }

    /// Same resolution, different supercell.
    pub fn with_supercell(&self, supercell: [usize; 3]) -> Self {
        Self {
            resolution: self.resolution,
            supercell,
        }
    }
}

/// Whether a field lives on a single cell or a supercell.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Domain {
    Cell,
    Supercell,
}

struct AxisPlan {
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
}

/// A periodic collocation grid on `n Gamma` with precomputed wave vectors
/// and FFT plans. Shared between fields through `Arc`.
pub struct Grid {
    spec: GridSpec,
    cell_vectors: [[f64; 3]; 3],
    reciprocal: [[f64; 3]; 3],
    dims: [usize; 3],
    cell_volume: f64,
    kvec: Vec<[f64; 3]>,
    k2: Vec<f64>,
    nyquist: Vec<bool>,
    mode_index: Vec<[i64; 3]>,
    plans: [Option<AxisPlan>; 3],
}

impl fmt::Debug for Grid {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Grid")
            .field("spec", &self.spec)
            .field("cell_vectors", &self.cell_vectors)
            .finish()
    }
}

impl PartialEq for Grid {
    fn eq(&self, other: &Self) -> bool {
        self.spec == other.spec && self.cell_vectors == other.cell_vectors
    }
}

/// Signed frequency for index `i` on an axis of `m` points, in `[-m/2, m/2)`.
pub(crate) fn signed_index(i: usize, m: usize) -> i64 {
    let i = i as i64;
    let m = m as i64;
    if i >= (m + 1) / 2 && m > 1 {
        i - m
    } else if m % 2 == 0 && i == m / 2 {
        -i
    } else {
        i
    }
}

impl Grid {
    pub fn new(cell_vectors: [[f64; 3]; 3], spec: GridSpec) -> Result<Arc<Self>> {
        spec.validate()?;
        let cell_volume = det3(&cell_vectors);
        if !(cell_volume > 0.0) {
            return Err(TfdwError::Invalid("cell volume must be positive".into()));
        }
        let reciprocal = reciprocal_rows(&cell_vectors);
        let dims = spec.dims();
        let total = spec.total_points();
        let mut kvec = Vec::with_capacity(total);
        let mut k2 = Vec::with_capacity(total);
        let mut nyquist = Vec::with_capacity(total);
        let mut mode_index = Vec::with_capacity(total);
        for i0 in 0..dims[0] {
            for i1 in 0..dims[1] {
                for i2 in 0..dims[2] {
                    let idx = [i0, i1, i2];
                    let mut m = [0i64; 3];
                    let mut k = [0.0; 3];
                    let mut nyq = false;
                    for a in 0..3 {
                        m[a] = signed_index(idx[a], dims[a]);
                        if dims[a] > 1 && dims[a].is_multiple_of(2) && m[a] == -(dims[a] as i64) / 2 {
                            nyq = true;
                        }
                        let frac = m[a] as f64 / spec.supercell[a] as f64;
                        for d in 0..3 {
                            k[d] += frac * reciprocal[a][d];
                        }
                    }
                    kvec.push(k);
                    k2.push(k[0] * k[0] + k[1] * k[1] + k[2] * k[2]);
                    nyquist.push(nyq);
                    mode_index.push(m);
                }
            }
        }
        let mut planner = FftPlanner::<f64>::new();
        let plans = [0, 1, 2].map(|a| {
            (dims[a] > 1).then(|| AxisPlan {
                forward: planner.plan_fft_forward(dims[a]),
                inverse: planner.plan_fft_inverse(dims[a]),
            })
        });
        Ok(Arc::new(Self {
            spec,
            cell_vectors,
            reciprocal,
            dims,
            cell_volume,
            kvec,
            k2,
            nyquist,
            mode_index,
            plans,
        }))
    }

    pub fn spec(&self) -> GridSpec {
        self.spec
    }

    pub fn dims(&self) -> [usize; 3] {
        self.dims
    }

    pub fn len(&self) -> usize {
        self.k2.len()
    }

    pub fn is_empty(&self) -> bool {
        self.k2.is_empty()
    }

    pub fn cell_vectors(&self) -> [[f64; 3]; 3] {
        self.cell_vectors
    }

    /// Reciprocal basis of the unit cell (rows).
    pub fn reciprocal(&self) -> [[f64; 3]; 3] {
        self.reciprocal
    }

    pub fn domain(&self) -> Domain {
        if self.spec.is_cell() {
            Domain::Cell
        } else {
            Domain::Supercell
        }
    }

    pub fn cell_volume(&self) -> f64 {
        self.cell_volume
    }

    /// `|n Gamma|`.
    pub fn volume(&self) -> f64 {
        self.cell_volume * self.spec.cell_count() as f64
    }

    /// Quadrature weight: `integral f = dv * sum f`.
    pub fn dv(&self) -> f64 {
        self.volume() / self.len() as f64
    }

    /// Weight of the volume-averaged integral `n^{-3} integral f`.
    pub fn avg_weight(&self) -> f64 {
        self.cell_volume / self.len() as f64
    }

    pub fn k(&self, idx: usize) -> [f64; 3] {
        self.kvec[idx]
    }

    pub fn k2(&self) -> &[f64] {
        &self.k2
    }

    pub fn is_nyquist(&self, idx: usize) -> bool {
        self.nyquist[idx]
    }

    /// Signed integer mode coordinates of a spectral index (supercell units).
    pub fn mode(&self, idx: usize) -> [i64; 3] {
        self.mode_index[idx]
    }

    pub fn flat_index(&self, p: [usize; 3]) -> usize {
        (p[0] * self.dims[1] + p[1]) * self.dims[2] + p[2]
    }

    pub fn unflatten(&self, idx: usize) -> [usize; 3] {
        let p2 = idx % self.dims[2];
        let rest = idx / self.dims[2];
        [rest / self.dims[1], rest % self.dims[1], p2]
    }

    /// Fractional coordinates of a point in the supercell, each in `[0, 1)`.
    pub fn fractional(&self, idx: usize) -> [f64; 3] {
        let p = self.unflatten(idx);
        [0, 1, 2].map(|a| p[a] as f64 / self.dims[a] as f64)
    }

    /// Cartesian position of a collocation point.
    pub fn position(&self, idx: usize) -> [f64; 3] {
        let t = self.fractional(idx);
        let mut x = [0.0; 3];
        for a in 0..3 {
            let s = t[a] * self.spec.supercell[a] as f64;
            for d in 0..3 {
                x[d] += s * self.cell_vectors[a][d];
            }
        }
        x
    }

    /// Index of the unit-cell collocation point that a supercell point maps to.
    pub fn cell_point(&self, idx: usize) -> [usize; 3] {
        let p = self.unflatten(idx);
        [0, 1, 2].map(|a| p[a] % self.spec.resolution[a])
    }

    pub fn same_as(&self, other: &Grid) -> bool {
        std::ptr::eq(self, other) || self == other
    }

    pub fn ensure_same(&self, other: &Grid) -> Result<()> {
        if self.same_as(other) {
            Ok(())
        } else {
            Err(TfdwError::Structural(format!(
                "grid mismatch: {:?} vs {:?}",
                self.spec, other.spec
            )))
        }
    }

    /// Unnormalized forward DFT in place.
    pub fn fft_forward(&self, data: &mut [Complex64]) {
        self.fft3(data, false);
    }

    /// Inverse DFT in place, including the `1/N` factor.
    pub fn fft_inverse(&self, data: &mut [Complex64]) {
        self.fft3(data, true);
        let scale = 1.0 / self.len() as f64;
        for v in data.iter_mut() {
            *v *= scale;
        }
    }

    fn fft3(&self, data: &mut [Complex64], inverse: bool) {
        assert_eq!(data.len(), self.len(), "FFT buffer length mismatch");
        let dims = self.dims;
        for axis in 0..3 {
            let Some(plan) = &self.plans[axis] else { continue };
            let fft = if inverse { &plan.inverse } else { &plan.forward };
            let m = dims[axis];
            let stride: usize = dims[axis + 1..].iter().product();
            if stride == 1 {
                fft.process(data);
                continue;
            }
            let outer = data.len() / (m * stride);
            let mut buf = vec![Complex64::new(0.0, 0.0); data.len()];
            let mut line = 0;
            for o in 0..outer {
                for inner in 0..stride {
                    let base = o * m * stride + inner;
                    for j in 0..m {
                        buf[line * m + j] = data[base + j * stride];
                    }
                    line += 1;
                }
            }
            fft.process(&mut buf);
            line = 0;
            for o in 0..outer {
                for inner in 0..stride {
                    let base = o * m * stride + inner;
                    for j in 0..m {
                        data[base + j * stride] = buf[line * m + j];
                    }
                    line += 1;
                }
            }
        }
    }

    /// Apply a real Fourier multiplier to a real array.
    pub fn apply_real_symbol(&self, values: &[f64], symbol: impl Fn(usize) -> f64) -> Vec<f64> {
        let mut buf: Vec<Complex64> = values.iter().map(|&v| Complex64::new(v, 0.0)).collect();
        self.fft_forward(&mut buf);
        for (i, c) in buf.iter_mut().enumerate() {
            *c *= symbol(i);
        }
        self.fft_inverse(&mut buf);
        buf.into_iter().map(|c| c.re).collect()
    }

    /// Apply a complex Fourier multiplier to a real array and keep the real part.
    pub fn apply_complex_symbol(
        &self,
        values: &[f64],
        symbol: impl Fn(usize) -> Complex64,
    ) -> Vec<f64> {
        let mut buf: Vec<Complex64> = values.iter().map(|&v| Complex64::new(v, 0.0)).collect();
        self.fft_forward(&mut buf);
        for (i, c) in buf.iter_mut().enumerate() {
            *c *= symbol(i);
        }
        self.fft_inverse(&mut buf);
        buf.into_iter().map(|c| c.re).collect()
    }

    /// `-Laplacian` applied to a real array.
    pub fn neg_laplacian(&self, values: &[f64]) -> Vec<f64> {
        self.apply_real_symbol(values, |i| self.k2[i])
    }

    /// Cartesian first derivative along direction `d`.
    pub fn partial(&self, values: &[f64], d: usize) -> Vec<f64> {
        self.apply_complex_symbol(values, |i| {
            if self.nyquist[i] {
                Complex64::new(0.0, 0.0)
            } else {
                Complex64::new(0.0, self.kvec[i][d])
            }
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn unit() -> [[f64; 3]; 3] {
        [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]]
    }

    #[test]
    fn signed_indices() {
        let got: Vec<i64> = (0..6).map(|i| signed_index(i, 6)).collect();
        assert_eq!(got, vec![0, 1, 2, -3, -2, -1]);
        assert_eq!(signed_index(0, 1), 0);
    }

    #[test]
    fn spec_validation() {
        assert!(GridSpec::cell([8, 8, 8]).validate().is_ok());
        assert!(GridSpec::cell([8, 1, 1]).validate().is_ok());
        assert!(GridSpec::cell([6, 2, 4]).validate().is_err());
        assert!(GridSpec::cell([5, 4, 4]).validate().is_err());
        assert!(GridSpec { resolution: [4, 4, 4], supercell: [0, 1, 1] }.validate().is_err());
    }

    #[test]
    fn total_points_and_volume() {
        let spec = GridSpec {
            resolution: [4, 6, 8],
            supercell: [2, 1, 3],
        };
        let g = Grid::new(unit(), spec).unwrap();
        assert_eq!(g.len(), 8 * 6 * 24);
        assert_eq!(spec.total_points(), 8 * 6 * 24);
        assert!((g.volume() - 6.0).abs() < 1e-14);
        assert_eq!(g.domain(), Domain::Supercell);
    }

    #[test]
    fn fft_round_trip_strided_axes() {
        let g = Grid::new(unit(), GridSpec::cell([4, 6, 8])).unwrap();
        let orig: Vec<Complex64> = (0..g.len())
            .map(|i| Complex64::new((i as f64 * 0.37).sin(), (i as f64 * 0.11).cos()))
            .collect();
        let mut buf = orig.clone();
        g.fft_forward(&mut buf);
        g.fft_inverse(&mut buf);
        for (a, b) in orig.iter().zip(&buf) {
            assert!((a - b).norm() < 1e-13);
        }
    }

    #[test]
    fn wave_vectors_supercell_units() {
        let g = Grid::new(unit(), GridSpec::chain(4, 2)).unwrap();
        // index 1 on an axis of 8 points over two cells -> k = 2 pi / 2
        let k = g.k(g.flat_index([1, 0, 0]));
        assert!((k[0] - std::f64::consts::PI).abs() < 1e-14);
    }
}
