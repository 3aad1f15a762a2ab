//! Linearized Euler-Lagrange operator, Bloch-Floquet fibers and stability.

mod fiber;
mod stability;

use std::f64::consts::PI;
use std::sync::Arc;

use nalgebra::Matrix3;
use num_complex::Complex64;

use crate::error::{Result, TfdwError};
use crate::krylov::{minres, MinresOptions, MinresOutcome};
use crate::lattice_grid::{Grid, ScalarField};
use crate::state::{State, Triple};

pub use fiber::{FiberOperator, GapOptions, GapResult};
pub use stability::{
    monkhorst_pack, stability_scan, FiberGap, StabilityClass, StabilityOptions, StabilityReport,
    WaveClass, XiGrid,
};

const EIG_FLOOR_REL: f64 = 1e-10;
const EIG_FLOOR_ABS: f64 = 1e-8;

/// `ℒ` at a base state: the Jacobian of the Newton map.
#[derive(Clone, Debug)]
pub struct LinearizedOperator {
    pub base_state: State,
    pub h: ScalarField,
    grid: Arc<Grid>,
    f_plus: Vec<f64>,
    f_minus: Vec<f64>,
    nu_plus: Vec<f64>,
    nu_minus: Vec<f64>,
    shift: f64,
}

/// Derivative of the local amplitude term, `(35/9)|t|^{4/3} - (20/9)|t|^{2/3}`.
#[inline]
pub(crate) fn local_derivative(t: f64) -> f64 {
    let a = t.abs();
    35.0 / 9.0 * a.powf(4.0 / 3.0) - 20.0 / 9.0 * a.powf(2.0 / 3.0)
}

/// Second derivative of the local amplitude term,
/// `(140/27)|t|^{1/3} sgn t - (40/27)|t|^{-1/3} sgn t`.
#[inline]
pub(crate) fn local_second_derivative(t: f64) -> f64 {
    let a = t.abs().max(1e-300);
    t.signum() * (140.0 / 27.0 * a.powf(1.0 / 3.0) - 40.0 / 27.0 * a.powf(-1.0 / 3.0))
}

impl LinearizedOperator {
    pub fn new(state: &State, h: &ScalarField) -> Result<Self> {
        state.nu_plus.ensure_same_grid(h)?;
        let grid = state.grid().clone();
        let coeff = |nu: &ScalarField, spin: f64| -> Vec<f64> {
            nu.values()
                .iter()
                .zip(state.v.values())
                .zip(h.values())
                .map(|((&n, &v), &hh)| local_derivative(n) + v + state.gauge - spin * hh)
                .collect()
        };
        Ok(Self {
            f_plus: coeff(&state.nu_plus, 1.0),
            f_minus: coeff(&state.nu_minus, -1.0),
            nu_plus: state.nu_plus.values().to_vec(),
            nu_minus: state.nu_minus.values().to_vec(),
            base_state: state.clone(),
            h: h.clone(),
            grid,
            shift: 0.0,
        })
    }

    /// `ℒ_h` for a constant field.
    pub fn constant_h(state: &State, h: f64) -> Result<Self> {
        Self::new(state, &ScalarField::constant(state.grid(), h))
    }

    /// `ℒ + s I`.
    pub fn with_shift(mut self, s: f64) -> Self {
        self.shift = s;
        self
    }

    pub fn shift(&self) -> f64 {
        self.shift
    }

    pub fn grid(&self) -> &Arc<Grid> {
        &self.grid
    }

    pub fn dim(&self) -> usize {
        3 * self.grid.len()
    }

    pub fn coefficients(&self) -> (&[f64], &[f64], &[f64], &[f64]) {
        (&self.f_plus, &self.f_minus, &self.nu_plus, &self.nu_minus)
    }

    /// Apply to a flat triple `[omega_+ | omega_- | W]`.
    pub fn apply_flat(&self, x: &[f64]) -> Vec<f64> {
        let n = self.grid.len();
        assert_eq!(x.len(), 3 * n, "perturbation length mismatch");
        let (wp, rest) = x.split_at(n);
        let (wm, ww) = rest.split_at(n);
        let lp = self.grid.neg_laplacian(wp);
        let lm = self.grid.neg_laplacian(wm);
        let lw = self.grid.neg_laplacian(ww);
        let s = self.shift;
        let mut out = vec![0.0; 3 * n];
        for i in 0..n {
            out[i] = lp[i] + (self.f_plus[i] + s) * wp[i] + self.nu_plus[i] * ww[i];
            out[n + i] = lm[i] + (self.f_minus[i] + s) * wm[i] + self.nu_minus[i] * ww[i];
            out[2 * n + i] = self.nu_plus[i] * wp[i] + self.nu_minus[i] * wm[i] - lw[i] / (8.0 * PI) + s * ww[i];
        }
        out
    }

    pub fn apply(&self, t: &Triple) -> Result<Triple> {
        self.grid.ensure_same(t.grid())?;
        Triple::from_flat(&self.grid, &self.apply_flat(&t.to_flat()))
    }

    /// Symmetric second derivative of the Newton map at the base state.
    pub fn second_derivative(&self, a: &Triple, b: &Triple) -> Result<Triple> {
        self.grid.ensure_same(a.grid())?;
        self.grid.ensure_same(b.grid())?;
        let n = self.grid.len();
        let (ap, am, av) = (a.plus.values(), a.minus.values(), a.v.values());
        let (bp, bm, bv) = (b.plus.values(), b.minus.values(), b.v.values());
        let mut out = vec![0.0; 3 * n];
        for i in 0..n {
            let kp = local_second_derivative(self.nu_plus[i]);
            let km = local_second_derivative(self.nu_minus[i]);
            out[i] = kp * ap[i] * bp[i] + av[i] * bp[i] + ap[i] * bv[i];
            out[n + i] = km * am[i] * bm[i] + av[i] * bm[i] + am[i] * bv[i];
            out[2 * n + i] = ap[i] * bp[i] + am[i] * bm[i];
        }
        Triple::from_flat(&self.grid, &out)
    }

    /// Crude upper bound on the operator norm.
    pub fn norm_bound(&self) -> f64 {
        let kmax = self.grid.k2().iter().cloned().fold(0.0, f64::max);
        let amax = |v: &[f64]| v.iter().fold(0.0f64, |m, x| m.max(x.abs()));
        kmax * (1.0 + 1.0 / (8.0 * PI))
            + amax(&self.f_plus).max(amax(&self.f_minus))
            + amax(&self.nu_plus).max(amax(&self.nu_minus))
            + self.shift.abs()
    }

    /// Coefficient means used by the spectral preconditioner.
    fn mean_coefficients(&self) -> [f64; 4] {
        let m = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
        [
            m(&self.f_plus) + self.shift,
            m(&self.f_minus) + self.shift,
            m(&self.nu_plus),
            m(&self.nu_minus),
        ]
    }

    /// Spectral preconditioner `|S_k|^{-power}` built from mean coefficients.
    pub fn preconditioner(&self, power: i32) -> ModePreconditioner {
        let c = self.mean_coefficients();
        let k2: Vec<f64> = self.grid.k2().to_vec();
        ModePreconditioner::new(self.grid.clone(), &k2, c, self.shift, power)
    }

    /// Solve `ℒ x = rhs` by preconditioned MINRES.
    pub fn solve_flat(&self, rhs: &[f64], x0: Option<&[f64]>, opts: &MinresOptions) -> Result<MinresOutcome> {
        let pc = self.preconditioner(1);
        let apply = |x: &[f64]| self.apply_flat(x);
        let prec = |x: &[f64]| pc.apply_real(x);
        let mut opts = *opts;
        if opts.anorm == 0.0 {
            opts.anorm = self.norm_bound();
        }
        minres(&apply, &prec, rhs, x0, &opts)
    }

    pub fn solve(&self, rhs: &Triple, opts: &MinresOptions) -> Result<Triple> {
        self.grid.ensure_same(rhs.grid())?;
        let out = self.solve_flat(&rhs.to_flat(), None, opts)?;
        Triple::from_flat(&self.grid, &out.x)
    }

    /// Bloch-Floquet fiber at quasi-momentum `xi` (Cartesian).
    pub fn fiber(&self, xi: [f64; 3]) -> Result<FiberOperator> {
        FiberOperator::new(self, xi)
    }
}

/// Per-mode `3x3` symmetric preconditioner blocks.
#[derive(Clone, Debug)]
pub struct ModePreconditioner {
    grid: Arc<Grid>,
    /// Row-major upper triangle `[p00, p01, p02, p11, p12, p22]` per mode.
    blocks: Vec<[f64; 6]>,
}

impl ModePreconditioner {
    pub(crate) fn new(grid: Arc<Grid>, k2: &[f64], c: [f64; 4], shift: f64, power: i32) -> Self {
        let [fp, fm, np, nm] = c;
        let raw: Vec<Matrix3<f64>> = k2
            .iter()
            .map(|&q| {
                Matrix3::new(
                    q + fp,
                    0.0,
                    np,
                    0.0,
                    q + fm,
                    nm,
                    np,
                    nm,
                    -q / (8.0 * PI) + shift,
                )
            })
            .collect();
        let scale = raw
            .iter()
            .map(|m| m.abs().max())
            .fold(0.0f64, f64::max)
            .max(1.0);
        let floor = (EIG_FLOOR_REL * scale).max(EIG_FLOOR_ABS);
        let blocks = raw
            .into_iter()
            .map(|m| {
                let e = m.symmetric_eigen();
                let mut d = Matrix3::zeros();
                for i in 0..3 {
                    d[(i, i)] = e.eigenvalues[i].abs().max(floor).powi(-power);
                }
                let p = e.eigenvectors * d * e.eigenvectors.transpose();
                [p[(0, 0)], p[(0, 1)], p[(0, 2)], p[(1, 1)], p[(1, 2)], p[(2, 2)]]
            })
            .collect();
        Self { grid, blocks }
    }

    fn apply_modes(&self, a: &mut [Complex64], b: &mut [Complex64], c: &mut [Complex64]) {
        for (i, p) in self.blocks.iter().enumerate() {
            let (x, y, z) = (a[i], b[i], c[i]);
            a[i] = x * p[0] + y * p[1] + z * p[2];
            b[i] = x * p[1] + y * p[3] + z * p[4];
            c[i] = x * p[2] + y * p[4] + z * p[5];
        }
    }

    /// Apply to a real flat triple.
    pub fn apply_real(&self, x: &[f64]) -> Vec<f64> {
        let n = self.grid.len();
        let to_c = |s: &[f64]| -> Vec<Complex64> { s.iter().map(|&v| Complex64::new(v, 0.0)).collect() };
        let mut a = to_c(&x[..n]);
        let mut b = to_c(&x[n..2 * n]);
        let mut c = to_c(&x[2 * n..]);
        self.apply_complex_parts(&mut a, &mut b, &mut c);
        a.iter().chain(&b).chain(&c).map(|z| z.re).collect()
    }

    /// Apply to a complex flat triple in place.
    pub fn apply_complex(&self, x: &[Complex64]) -> Vec<Complex64> {
        let n = self.grid.len();
        let mut a = x[..n].to_vec();
        let mut b = x[n..2 * n].to_vec();
        let mut c = x[2 * n..].to_vec();
        self.apply_complex_parts(&mut a, &mut b, &mut c);
        let mut out = a;
        out.extend(b);
        out.extend(c);
        out
    }

    fn apply_complex_parts(&self, a: &mut [Complex64], b: &mut [Complex64], c: &mut [Complex64]) {
        for v in [&mut *a, &mut *b, &mut *c] {
            self.grid.fft_forward(v);
        }
        self.apply_modes(a, b, c);
        for v in [a, b, c] {
            self.grid.fft_inverse(v);
        }
    }
}

/// Check the symmetry defect `|<ℒu, v> - <u, ℒv>|` relative to `||u|| ||v||`.
pub fn symmetry_defect(op: &LinearizedOperator, u: &Triple, v: &Triple) -> Result<f64> {
    let lu = op.apply(u)?;
    let lv = op.apply(v)?;
    let a = lu.inner(v)?;
    let b = u.inner(&lv)?;
    let scale = u.l2_norm() * v.l2_norm();
    if scale == 0.0 {
        return Err(TfdwError::Degenerate("zero test vector".into()));
    }
    Ok((a - b).abs() / scale)
}
