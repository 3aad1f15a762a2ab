use std::f64::consts::PI;
use std::sync::Arc;

use num_complex::Complex64;

use super::field::ScalarField;
use super::grid::Grid;
use crate::error::{Result, TfdwError};

/// Fourier coefficients with the continuum normalization
/// `f^(k) = (2 pi)^{-3/2} integral f exp(-i k.x) dx`, evaluated by the
/// trapezoid rule on the collocation points.
#[derive(Clone, Debug)]
pub struct SpectralField {
    grid: Arc<Grid>,
    coeffs: Vec<Complex64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Direction {
    Forward,
    Inverse,
}

/// Either side of the transform pair.
#[derive(Clone, Debug)]
pub enum Representation {
    Real(ScalarField),
    Spectral(SpectralField),
}

/// `(2 pi)^{-3/2} |n Gamma| / N`: raw DFT to continuum coefficient.
fn continuum_factor(grid: &Grid) -> f64 {
    (2.0 * PI).powf(-1.5) * grid.volume() / grid.len() as f64
}

impl SpectralField {
    pub fn grid(&self) -> &Arc<Grid> {
        &self.grid
    }

    pub fn coeffs(&self) -> &[Complex64] {
        &self.coeffs
    }

    /// Coefficient at a signed mode index (supercell units).
    pub fn at_mode(&self, m: [i64; 3]) -> Complex64 {
        let dims = self.grid.dims();
        let p = [0, 1, 2].map(|a| m[a].rem_euclid(dims[a] as i64) as usize);
        self.coeffs[self.grid.flat_index(p)]
    }

    pub fn forward(field: &ScalarField) -> Result<Self> {
        if !field.is_finite() {
            return Err(TfdwError::Invalid("field contains non-finite values".into()));
        }
        let grid = field.grid().clone();
        let mut buf: Vec<Complex64> = field
            .values()
            .iter()
            .map(|&v| Complex64::new(v, 0.0))
            .collect();
        grid.fft_forward(&mut buf);
        let c = continuum_factor(&grid);
        for v in buf.iter_mut() {
            *v *= c;
        }
        Ok(Self { grid, coeffs: buf })
    }

    /// Exact discrete inverse; keeps the real part.
    pub fn inverse(&self) -> ScalarField {
        let mut buf = self.coeffs.clone();
        let c = 1.0 / continuum_factor(&self.grid);
        for v in buf.iter_mut() {
            *v *= c;
        }
        self.grid.fft_inverse(&mut buf);
        ScalarField::new(self.grid.clone(), buf.into_iter().map(|z| z.re).collect())
            .expect("inverse transform preserves length")
    }
}

/// Forward or inverse transform. The input representation must match the
/// requested direction.
pub fn transform(input: &Representation, direction: Direction) -> Result<Representation> {
    match (input, direction) {
        (Representation::Real(f), Direction::Forward) => {
            Ok(Representation::Spectral(SpectralField::forward(f)?))
        }
        (Representation::Spectral(s), Direction::Inverse) => Ok(Representation::Real(s.inverse())),
        _ => Err(TfdwError::Structural(
            "transform direction does not match input representation".into(),
        )),
    }
}

/// Spectral derivative `partial^alpha f`, `alpha` a Cartesian multi-index.
///
/// Odd-order derivatives drop the unpaired Nyquist modes so that real
/// fields stay real.
pub fn derivative(field: &ScalarField, alpha: [u32; 3]) -> ScalarField {
    let grid = field.grid().clone();
    let order: u32 = alpha.iter().sum();
    if order == 0 {
        return field.clone();
    }
    let values = grid.apply_complex_symbol(field.values(), |i| {
        if order % 2 == 1 && grid.is_nyquist(i) {
            return Complex64::new(0.0, 0.0);
        }
        let k = grid.k(i);
        let mut s = Complex64::new(1.0, 0.0);
        for d in 0..3 {
            for _ in 0..alpha[d] {
                s *= Complex64::new(0.0, k[d]);
            }
        }
        s
    });
    field.with_values(values)
}

pub fn laplacian(field: &ScalarField) -> ScalarField {
    let grid = field.grid().clone();
    let values = grid.apply_real_symbol(field.values(), |i| -grid.k2()[i]);
    field.with_values(values)
}

/// Solve `-Laplacian V = rhs` for the mean-zero `V`.
pub fn poisson_solve(rhs: &ScalarField) -> Result<ScalarField> {
    let rms = rms(rhs.values());
    let mean = rhs.mean();
    let tol = 1e-10 * rms;
    if mean.abs() > tol {
        return Err(TfdwError::Solvability {
            mean,
            tolerance: tol,
        });
    }
    Ok(inverse_neg_laplacian(rhs))
}

/// `(-Laplacian)^{-1}` on the mean-zero part; the constant mode is dropped.
pub(crate) fn inverse_neg_laplacian(rhs: &ScalarField) -> ScalarField {
    let grid = rhs.grid().clone();
    let values = grid.apply_real_symbol(rhs.values(), |i| {
        let k2 = grid.k2()[i];
        if k2 == 0.0 {
            0.0
        } else {
            1.0 / k2
        }
    });
    rhs.with_values(values)
}

pub(crate) fn rms(v: &[f64]) -> f64 {
    (v.iter().map(|x| x * x).sum::<f64>() / v.len() as f64).sqrt()
}

/// Coulomb (`H^{-1}`-dot) inner product
/// `4 pi (2 pi)^3 / |n Gamma| sum_{k != 0} conj(f^) g^ / |k|^2`,
/// the Parseval-consistent form of `D(f, g)`.
pub fn hminus1_inner(f: &ScalarField, g: &ScalarField) -> Result<f64> {
    f.ensure_same_grid(g)?;
    check_mean_zero(f)?;
    check_mean_zero(g)?;
    Ok(hminus1_inner_unchecked(f, g))
}

fn check_mean_zero(f: &ScalarField) -> Result<()> {
    let mean = f.mean();
    let tol = 1e-10 * rms(f.values()).max(f64::MIN_POSITIVE);
    if mean.abs() > tol {
        Err(TfdwError::MeanViolation {
            coefficient: mean,
            tolerance: tol,
        })
    } else {
        Ok(())
    }
}

/// Same sum without the mean check; the constant mode is skipped.
pub(crate) fn hminus1_inner_unchecked(f: &ScalarField, g: &ScalarField) -> f64 {
    let grid = f.grid();
    let to_c = |v: &[f64]| -> Vec<Complex64> { v.iter().map(|&x| Complex64::new(x, 0.0)).collect() };
    let mut a = to_c(f.values());
    let mut b = to_c(g.values());
    grid.fft_forward(&mut a);
    grid.fft_forward(&mut b);
    let n = grid.len() as f64;
    let mut s = 0.0;
    for (i, (x, y)) in a.iter().zip(&b).enumerate() {
        let k2 = grid.k2()[i];
        if k2 > 0.0 {
            s += (x.conj() * y).re / k2;
        }
    }
    4.0 * PI * grid.volume() / (n * n) * s
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lattice_grid::GridSpec;

    fn cube(res: [usize; 3]) -> Arc<Grid> {
        Grid::new(
            [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]],
            GridSpec::cell(res),
        )
        .unwrap()
    }

    #[test]
    fn constant_field_transform() {
        let g = cube([4, 4, 4]);
        let f = ScalarField::constant(&g, 1.0);
        let s = SpectralField::forward(&f).unwrap();
        assert!((s.at_mode([0, 0, 0]).re - (2.0 * PI).powf(-1.5)).abs() < 1e-14);
        for (i, c) in s.coeffs().iter().enumerate().skip(1) {
            assert!(c.norm() < 1e-14, "mode {i}");
        }
    }

    #[test]
    fn cosine_transform_two_modes() {
        let g = cube([8, 4, 4]);
        let f = ScalarField::from_fn(&g, |x| (2.0 * PI * x[0]).cos());
        let s = SpectralField::forward(&f).unwrap();
        let half = (2.0 * PI).powf(-1.5) / 2.0;
        for (i, c) in s.coeffs().iter().enumerate() {
            let m = g.mode(i);
            let expect = if m == [1, 0, 0] || m == [-1, 0, 0] { half } else { 0.0 };
            assert!((c.re - expect).abs() < 1e-14 && c.im.abs() < 1e-14);
        }
    }

    #[test]
    fn derivative_and_laplacian_of_cosine() {
        let g = cube([8, 4, 4]);
        let f = ScalarField::from_fn(&g, |x| (2.0 * PI * x[0]).cos());
        let d = derivative(&f, [1, 0, 0]);
        let l = laplacian(&f);
        for i in 0..g.len() {
            let x = g.position(i);
            assert!((d.values()[i] + 2.0 * PI * (2.0 * PI * x[0]).sin()).abs() < 1e-12);
            assert!((l.values()[i] + 4.0 * PI * PI * (2.0 * PI * x[0]).cos()).abs() < 1e-10);
        }
        let c = ScalarField::constant(&g, 3.0);
        assert!(laplacian(&c).max_abs() < 1e-13);
    }

    #[test]
    fn poisson_single_mode_and_solvability() {
        let g = cube([8, 4, 4]);
        let rhs = ScalarField::from_fn(&g, |x| 4.0 * PI * (2.0 * PI * x[0]).cos());
        let v = poisson_solve(&rhs).unwrap();
        for i in 0..g.len() {
            let x = g.position(i);
            assert!((v.values()[i] - (2.0 * PI * x[0]).cos() / PI).abs() < 1e-13);
        }
        let zero = poisson_solve(&ScalarField::zeros(&g)).unwrap();
        assert_eq!(zero.max_abs(), 0.0);
        let bad = ScalarField::constant(&g, 1.0);
        assert_eq!(poisson_solve(&bad).unwrap_err().kind(), "solvability");
    }

    #[test]
    fn hminus1_rejects_mean() {
        let g = cube([4, 4, 4]);
        let f = ScalarField::constant(&g, 1.0);
        assert_eq!(hminus1_inner(&f, &f).unwrap_err().kind(), "mean_violation");
    }

    #[test]
    fn transform_direction_checked() {
        let g = cube([4, 4, 4]);
        let f = Representation::Real(ScalarField::constant(&g, 1.0));
        assert!(transform(&f, Direction::Inverse).is_err());
        let s = transform(&f, Direction::Forward).unwrap();
        let back = transform(&s, Direction::Inverse).unwrap();
        match back {
            Representation::Real(r) => assert!((r.values()[5] - 1.0).abs() < 1e-14),
            _ => panic!("expected real representation"),
        }
    }
}
