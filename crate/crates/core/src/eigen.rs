//! Hermitian eigensolvers: dense (small problems) and block LOBPCG for the
//! lowest eigenpairs of a positive semi-definite operator.

use nalgebra::DMatrix;
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Result, TfdwError};

pub type CVec = Vec<Complex64>;

pub(crate) fn cdot(a: &[Complex64], b: &[Complex64]) -> Complex64 {
    a.iter().zip(b).map(|(x, y)| x.conj() * y).sum()
}

pub(crate) fn cnorm(a: &[Complex64]) -> f64 {
    a.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
}

/// Eigenvalues in ascending order with matching eigenvector columns.
pub fn dense_hermitian_eigen(mut m: DMatrix<Complex64>) -> (Vec<f64>, DMatrix<Complex64>) {
    let n = m.nrows();
    // symmetrize against roundoff in assembly
    for i in 0..n {
        for j in i..n {
            let avg = 0.5 * (m[(i, j)] + m[(j, i)].conj());
            m[(i, j)] = avg;
            m[(j, i)] = avg.conj();
        }
    }
    let eig = m.symmetric_eigen();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let values = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let vectors = DMatrix::from_fn(n, n, |r, c| eig.eigenvectors[(r, order[c])]);
    (values, vectors)
}

#[derive(Clone, Copy, Debug)]
pub struct LobpcgOptions {
    /// Relative residual target `||A x - theta x|| <= tol * theta`.
    pub tol: f64,
    /// Estimate of `||A||`; residuals below `1e3 eps ||A||` count as converged.
    pub norm_estimate: f64,
    pub max_iter: usize,
    pub block: usize,
    pub seed: u64,
}

impl Default for LobpcgOptions {
    fn default() -> Self {
        Self {
            tol: 1e-10,
            norm_estimate: 1.0,
            max_iter: 500,
            block: 4,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug)]
pub struct LobpcgResult {
    pub eigenvalues: Vec<f64>,
    pub vectors: Vec<CVec>,
    pub iterations: usize,
    pub residual_history: Vec<f64>,
}

/// Orthonormalize by modified Gram-Schmidt with one reorthogonalization
/// pass, dropping numerically dependent directions.
fn orthonormalize(vs: &[CVec]) -> Vec<CVec> {
    let mut out: Vec<CVec> = Vec::with_capacity(vs.len());
    for v in vs {
        let n0 = cnorm(v);
        if !(n0 > 0.0) || !n0.is_finite() {
            continue;
        }
        let mut w: CVec = v.iter().map(|z| z / n0).collect();
        for _ in 0..2 {
            for q in &out {
                let proj = cdot(q, &w);
                for (wi, qi) in w.iter_mut().zip(q) {
                    *wi -= proj * qi;
                }
            }
        }
        let n1 = cnorm(&w);
        if n1 > 1e-10 {
            for z in w.iter_mut() {
                *z /= n1;
            }
            out.push(w);
        }
    }
    out
}

fn combine(basis: &[CVec], coefs: &DMatrix<Complex64>, col: usize) -> CVec {
    let n = basis[0].len();
    let mut v = vec![Complex64::new(0.0, 0.0); n];
    for (j, b) in basis.iter().enumerate() {
        let c = coefs[(j, col)];
        if c == Complex64::new(0.0, 0.0) {
            continue;
        }
        for (o, x) in v.iter_mut().zip(b) {
            *o += c * x;
        }
    }
    v
}

/// Lowest `nev` eigenpairs of a Hermitian positive semi-definite operator.
pub fn lobpcg_smallest(
    apply: &dyn Fn(&[Complex64]) -> CVec,
    precond: &dyn Fn(&[Complex64]) -> CVec,
    dim: usize,
    nev: usize,
    opts: &LobpcgOptions,
) -> Result<LobpcgResult> {
    let m = opts.block.max(nev).min(dim);
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let start: Vec<CVec> = (0..m)
        .map(|_| {
            let v: CVec = (0..dim)
                .map(|_| Complex64::new(rng.gen::<f64>() - 0.5, rng.gen::<f64>() - 0.5))
                .collect();
            precond(&v)
        })
        .collect();
    let mut x = orthonormalize(&start);
    let mut p: Vec<CVec> = Vec::new();
    let mut history = Vec::new();
    let floor = 1e3 * f64::EPSILON * opts.norm_estimate;

    for iter in 0..opts.max_iter {
        // Rayleigh-Ritz on span(X, W, P)
        let ax: Vec<CVec> = x.iter().map(|v| apply(v)).collect();
        let h = DMatrix::from_fn(x.len(), x.len(), |i, j| cdot(&x[i], &ax[j]));
        let (theta, c) = dense_hermitian_eigen(h);
        let xr: Vec<CVec> = (0..x.len()).map(|j| combine(&x, &c, j)).collect();
        let axr: Vec<CVec> = (0..x.len()).map(|j| combine(&ax, &c, j)).collect();
        let resid: Vec<CVec> = (0..x.len())
            .map(|j| {
                axr[j]
                    .iter()
                    .zip(&xr[j])
                    .map(|(a, b)| a - b * theta[j])
                    .collect()
            })
            .collect();
        let rn: Vec<f64> = resid.iter().map(|r| cnorm(r)).collect();
        history.push(rn[0]);
        let converged = (0..nev).all(|j| rn[j] <= opts.tol * theta[j].abs() || rn[j] <= floor);
        if converged {
            return Ok(LobpcgResult {
                eigenvalues: theta[..nev].to_vec(),
                vectors: xr[..nev].to_vec(),
                iterations: iter,
                residual_history: history,
            });
        }
        let w: Vec<CVec> = resid.iter().map(|r| precond(r)).collect();
        let mut pool = xr.clone();
        pool.extend(w);
        pool.extend(p.iter().cloned());
        let q = orthonormalize(&pool);
        let aq: Vec<CVec> = q.iter().map(|v| apply(v)).collect();
        let hq = DMatrix::from_fn(q.len(), q.len(), |i, j| cdot(&q[i], &aq[j]));
        let (_, cq) = dense_hermitian_eigen(hq);
        let keep = m.min(q.len());
        let new_x: Vec<CVec> = (0..keep).map(|j| combine(&q, &cq, j)).collect();
        // search direction: part of the update orthogonal to the old block
        p = new_x
            .iter()
            .map(|nx| {
                let mut d = nx.clone();
                for ox in &xr {
                    let proj = cdot(ox, nx);
                    for (di, oi) in d.iter_mut().zip(ox) {
                        *di -= proj * oi;
                    }
                }
                d
            })
            .filter(|d| cnorm(d) > 1e-12)
            .collect();
        x = orthonormalize(&new_x);
    }
    Err(TfdwError::EigenNonConvergence {
        iterations: opts.max_iter,
        residual_history: history,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dense_eigen_sorted_hermitian() {
        let m = DMatrix::from_row_slice(
            2,
            2,
            &[
                Complex64::new(2.0, 0.0),
                Complex64::new(0.0, 1.0),
                Complex64::new(0.0, -1.0),
                Complex64::new(2.0, 0.0),
            ],
        );
        let (vals, _) = dense_hermitian_eigen(m);
        assert!((vals[0] - 1.0).abs() < 1e-14 && (vals[1] - 3.0).abs() < 1e-14);
    }

    #[test]
    fn lobpcg_diagonal() {
        let d: Vec<f64> = (0..200).map(|i| 0.5 + (i as f64).powi(2)).collect();
        let dd = d.clone();
        let apply = move |x: &[Complex64]| -> CVec { x.iter().zip(&dd).map(|(a, b)| a * b).collect() };
        let de = d.clone();
        let pre = move |x: &[Complex64]| -> CVec { x.iter().zip(&de).map(|(a, b)| a / (b + 1.0)).collect() };
        let opts = LobpcgOptions { norm_estimate: 4e4, ..Default::default() };
        let r = lobpcg_smallest(&apply, &pre, 200, 2, &opts).unwrap();
        assert!((r.eigenvalues[0] - 0.5).abs() < 1e-9);
        assert!((r.eigenvalues[1] - 1.5).abs() < 1e-9);
    }

    #[test]
    fn nonconvergence_carries_history() {
        let apply = |x: &[Complex64]| -> CVec { x.iter().enumerate().map(|(i, a)| a * (1.0 + i as f64)).collect() };
        let id = |x: &[Complex64]| -> CVec { x.to_vec() };
        let opts = LobpcgOptions { max_iter: 1, block: 1, tol: 1e-15, norm_estimate: 0.0, ..Default::default() };
        match lobpcg_smallest(&apply, &id, 500, 1, &opts) {
            Err(TfdwError::EigenNonConvergence { residual_history, .. }) => assert_eq!(residual_history.len(), 1),
            other => panic!("expected non-convergence, got {other:?}"),
        }
    }
}
