use std::f64::consts::PI;
use std::sync::Arc;

use nalgebra::DMatrix;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use super::{LinearizedOperator, ModePreconditioner};
use crate::eigen::{cdot, cnorm, dense_hermitian_eigen, lobpcg_smallest, CVec, LobpcgOptions};
use crate::error::Result;
use crate::lattice_grid::{dot3, Grid};

/// Options for the smallest-magnitude eigenvalue search.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GapOptions {
    pub tol: f64,
    pub max_iter: usize,
    pub block: usize,
    pub seed: u64,
    /// Fibers of at most this dimension are diagonalized densely.
    pub dense_limit: usize,
}

impl Default for GapOptions {
    fn default() -> Self {
        Self {
            tol: 1e-10,
            max_iter: 500,
            block: 4,
            seed: 7,
            dense_limit: 1200,
        }
    }
}

#[derive(Clone, Debug)]
pub struct GapResult {
    /// `min |lambda|`.
    pub gap: f64,
    /// The eigenvalue attaining it (signed).
    pub eigenvalue: f64,
    pub vector: CVec,
    pub iterations: usize,
    /// Full sorted spectrum when computed densely.
    pub spectrum: Option<Vec<f64>>,
}

/// `ℒ_xi` acting on periodic complex triples of the base grid.
#[derive(Clone, Debug)]
pub struct FiberOperator {
    grid: Arc<Grid>,
    xi: [f64; 3],
    q2: Vec<f64>,
    f_plus: Vec<f64>,
    f_minus: Vec<f64>,
    nu_plus: Vec<f64>,
    nu_minus: Vec<f64>,
    mean: [f64; 4],
    shift: f64,
}

/// Fractional coordinates of `xi` in the reciprocal basis of the grid's
/// periodicity lattice (`b_a / n_a`), wrapped into `[-1/2, 1/2)`.
pub(crate) fn xi_fractional(grid: &Grid, xi: [f64; 3]) -> [f64; 3] {
    let a = grid.cell_vectors();
    let n = grid.spec().supercell;
    [0, 1, 2].map(|ax| {
        let s = dot3(&xi, &a[ax]) * n[ax] as f64 / (2.0 * PI);
        s - (s + 0.5).floor()
    })
}

/// Cartesian quasi-momentum from fractional coordinates in `b_a / n_a`.
pub(crate) fn xi_cartesian(grid: &Grid, s: [f64; 3]) -> [f64; 3] {
    let b = grid.reciprocal();
    let n = grid.spec().supercell;
    let mut out = [0.0; 3];
    for a in 0..3 {
        for d in 0..3 {
            out[d] += s[a] / n[a] as f64 * b[a][d];
        }
    }
    out
}

impl FiberOperator {
    pub(crate) fn new(op: &LinearizedOperator, xi: [f64; 3]) -> Result<Self> {
        let grid = op.grid().clone();
        let s = xi_fractional(&grid, xi);
        let dims = grid.dims();
        let n = grid.spec().supercell;
        let b = grid.reciprocal();
        let q2 = (0..grid.len())
            .map(|i| {
                let m = grid.mode(i);
                let mut k = [0.0; 3];
                for a in 0..3 {
                    let half = dims[a] as f64 / 2.0;
                    let mut q = m[a] as f64 + s[a];
                    if dims[a] == 1 {
                        q = s[a];
                    } else if q >= half {
                        q -= dims[a] as f64;
                    } else if q < -half {
                        q += dims[a] as f64;
                    }
                    for d in 0..3 {
                        k[d] += q / n[a] as f64 * b[a][d];
                    }
                }
                k[0] * k[0] + k[1] * k[1] + k[2] * k[2]
            })
            .collect();
        let (fp, fm, np, nm) = op.coefficients();
        Ok(Self {
            xi: xi_cartesian(&grid, s),
            grid,
            q2,
            f_plus: fp.to_vec(),
            f_minus: fm.to_vec(),
            nu_plus: np.to_vec(),
            nu_minus: nm.to_vec(),
            mean: op.mean_coefficients(),
            shift: op.shift(),
        })
    }

    /// Wrapped quasi-momentum (Cartesian).
    pub fn xi(&self) -> [f64; 3] {
        self.xi
    }

    pub fn dim(&self) -> usize {
        3 * self.grid.len()
    }

    pub fn grid(&self) -> &Arc<Grid> {
        &self.grid
    }

    fn neg_laplacian_xi(&self, v: &[Complex64]) -> CVec {
        let mut buf = v.to_vec();
        self.grid.fft_forward(&mut buf);
        for (c, q) in buf.iter_mut().zip(&self.q2) {
            *c *= *q;
        }
        self.grid.fft_inverse(&mut buf);
        buf
    }

    pub fn apply(&self, x: &[Complex64]) -> CVec {
        let n = self.grid.len();
        assert_eq!(x.len(), 3 * n);
        let (wp, rest) = x.split_at(n);
        let (wm, ww) = rest.split_at(n);
        let lp = self.neg_laplacian_xi(wp);
        let lm = self.neg_laplacian_xi(wm);
        let lw = self.neg_laplacian_xi(ww);
        let s = self.shift;
        let mut out = vec![Complex64::new(0.0, 0.0); 3 * n];
        for i in 0..n {
            out[i] = lp[i] + wp[i] * (self.f_plus[i] + s) + ww[i] * self.nu_plus[i];
            out[n + i] = lm[i] + wm[i] * (self.f_minus[i] + s) + ww[i] * self.nu_minus[i];
            out[2 * n + i] = wp[i] * self.nu_plus[i] + wm[i] * self.nu_minus[i] - lw[i] / (8.0 * PI) + ww[i] * s;
        }
        out
    }

    /// Dense matrix in the collocation basis.
    pub fn dense_matrix(&self) -> DMatrix<Complex64> {
        let d = self.dim();
        let mut m = DMatrix::zeros(d, d);
        let mut e = vec![Complex64::new(0.0, 0.0); d];
        for j in 0..d {
            e[j] = Complex64::new(1.0, 0.0);
            let col = self.apply(&e);
            for (i, v) in col.into_iter().enumerate() {
                m[(i, j)] = v;
            }
            e[j] = Complex64::new(0.0, 0.0);
        }
        m
    }

    /// Full spectrum and eigenvectors (ascending).
    pub fn dense_eigen(&self) -> (Vec<f64>, DMatrix<Complex64>) {
        dense_hermitian_eigen(self.dense_matrix())
    }

    pub fn preconditioner(&self, power: i32) -> ModePreconditioner {
        ModePreconditioner::new(self.grid.clone(), &self.q2, self.mean, self.shift, power)
    }

    /// Rough `||ℒ_xi||` from the constant-coefficient symbol.
    fn norm_estimate(&self) -> f64 {
        let qmax = self.q2.iter().copied().fold(0.0, f64::max);
        let fmax = self
            .f_plus
            .iter()
            .chain(&self.f_minus)
            .chain(&self.nu_plus)
            .chain(&self.nu_minus)
            .fold(0.0f64, |m, v| m.max(v.abs()));
        qmax + 2.0 * fmax + self.shift.abs()
    }

    /// Smallest-magnitude eigenvalue: dense below the size limit, otherwise
    /// LOBPCG on `ℒ_xi^2`.
    pub fn gap(&self, opts: &GapOptions) -> Result<GapResult> {
        if self.dim() <= opts.dense_limit {
            let (vals, vecs) = self.dense_eigen();
            let (idx, _) = vals
                .iter()
                .enumerate()
                .min_by(|a, b| a.1.abs().total_cmp(&b.1.abs()))
                .expect("non-empty spectrum");
            return Ok(GapResult {
                gap: vals[idx].abs(),
                eigenvalue: vals[idx],
                vector: vecs.column(idx).iter().copied().collect(),
                iterations: 0,
                spectrum: Some(vals),
            });
        }
        let pc = self.preconditioner(2);
        let sq = |x: &[Complex64]| self.apply(&self.apply(x));
        let pre = |x: &[Complex64]| pc.apply_complex(x);
        let lopts = LobpcgOptions {
            tol: opts.tol,
            norm_estimate: self.norm_estimate().powi(2),
            max_iter: opts.max_iter,
            block: opts.block,
            seed: opts.seed,
        };
        let res = lobpcg_smallest(&sq, &pre, self.dim(), 1, &lobpcg_with_block(lopts))?;
        let v = res.vectors[0].clone();
        let lv = self.apply(&v);
        let nv = cnorm(&v);
        let gap = cnorm(&lv) / nv;
        let rq = cdot(&v, &lv).re / (nv * nv);
        Ok(GapResult {
            gap,
            eigenvalue: if rq < 0.0 { -gap } else { gap },
            vector: v,
            iterations: res.iterations,
            spectrum: None,
        })
    }
}

fn lobpcg_with_block(o: LobpcgOptions) -> LobpcgOptions {
    LobpcgOptions { block: o.block.max(2), ..o }
}
