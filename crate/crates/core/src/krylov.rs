//! Preconditioned MINRES for symmetric, possibly indefinite systems.

use crate::error::{Result, TfdwError};
use crate::lattice_grid::dot;

#[derive(Clone, Copy, Debug)]
pub struct MinresOptions {
    /// Target for `||b - A x|| / ||b||` (Euclidean).
    pub rtol: f64,
    pub max_iter: usize,
    /// Number of restarts from the current iterate when the recurrence
    /// estimate converged but the true residual did not.
    pub max_restarts: usize,
    /// Bound on `||A||`; residuals under `100 eps ||A|| ||x||` are accepted
    /// as converged since nothing smaller is representable. Zero disables.
    pub anorm: f64,
}

impl Default for MinresOptions {
    fn default() -> Self {
        Self {
            rtol: 1e-10,
            max_iter: 2000,
            max_restarts: 4,
            anorm: 0.0,
        }
    }
}

#[derive(Clone, Debug)]
pub struct MinresOutcome {
    pub x: Vec<f64>,
    pub iterations: usize,
    /// True relative residual at exit.
    pub residual: f64,
    /// Lanczos-based estimate of `||A||`, useful for conditioning reports.
    pub anorm: f64,
}

fn norm(v: &[f64]) -> f64 {
    dot(v, v).sqrt()
}

fn true_residual(apply: &dyn Fn(&[f64]) -> Vec<f64>, b: &[f64], x: &[f64]) -> Vec<f64> {
    let ax = apply(x);
    b.iter().zip(ax).map(|(bi, ai)| bi - ai).collect()
}

/// Solve `A x = b` with `A` symmetric and `precond` a symmetric positive
/// definite approximation of `|A|^{-1}`.
pub fn minres(
    apply: &dyn Fn(&[f64]) -> Vec<f64>,
    precond: &dyn Fn(&[f64]) -> Vec<f64>,
    b: &[f64],
    x0: Option<&[f64]>,
    opts: &MinresOptions,
) -> Result<MinresOutcome> {
    let n = b.len();
    let bnorm = norm(b);
    let mut x = x0.map(|v| v.to_vec()).unwrap_or_else(|| vec![0.0; n]);
    if bnorm == 0.0 {
        return Ok(MinresOutcome {
            x: vec![0.0; n],
            iterations: 0,
            residual: 0.0,
            anorm: 0.0,
        });
    }
    let mut total_iter = 0;
    let mut inner_tol = opts.rtol;
    let mut anorm = 0.0;
    let mut last = f64::INFINITY;
    let target = |x: &[f64]| opts.rtol.max(100.0 * f64::EPSILON * opts.anorm * norm(x) / bnorm);
    for _ in 0..=opts.max_restarts {
        let r = true_residual(apply, b, &x);
        let rel = norm(&r) / bnorm;
        last = rel;
        if rel <= target(&x) {
            return Ok(MinresOutcome {
                x,
                iterations: total_iter,
                residual: rel,
                anorm,
            });
        }
        let budget = opts.max_iter.saturating_sub(total_iter);
        if budget == 0 {
            break;
        }
        let (dx, its, an) = minres_cycle(apply, precond, &r, inner_tol * bnorm / norm(&r), budget);
        total_iter += its;
        anorm = f64::max(anorm, an);
        for (xi, di) in x.iter_mut().zip(&dx) {
            *xi += di;
        }
        let after = norm(&true_residual(apply, b, &x)) / bnorm;
        if after <= target(&x) {
            return Ok(MinresOutcome {
                x,
                iterations: total_iter,
                residual: after,
                anorm,
            });
        }
        // the preconditioned estimate was optimistic; ask for more
        inner_tol = (inner_tol * opts.rtol / after).max(1e-16);
        last = after;
    }
    Err(TfdwError::LinearSolver {
        iterations: total_iter,
        residual: last,
        gap_estimate: None,
    })
}

/// One MINRES run from zero on `A d = r`; stops when the preconditioned
/// residual estimate falls below `rtol` relative to its start.
fn minres_cycle(
    apply: &dyn Fn(&[f64]) -> Vec<f64>,
    precond: &dyn Fn(&[f64]) -> Vec<f64>,
    b: &[f64],
    rtol: f64,
    max_iter: usize,
) -> (Vec<f64>, usize, f64) {
    let n = b.len();
    let mut x = vec![0.0; n];
    let mut r1 = b.to_vec();
    let mut y = precond(&r1);
    let beta1_sq = dot(&r1, &y);
    if !(beta1_sq > 0.0) {
        return (x, 0, 0.0);
    }
    let beta1 = beta1_sq.sqrt();
    let mut r2 = r1.clone();
    let mut oldb = 0.0;
    let mut beta = beta1;
    let mut dbar = 0.0;
    let mut epsln = 0.0;
    let mut phibar = beta1;
    let mut cs = -1.0;
    let mut sn = 0.0;
    let mut tnorm2 = 0.0;
    let mut w = vec![0.0; n];
    let mut w2 = vec![0.0; n];
    let mut its = 0;
    while its < max_iter {
        its += 1;
        let s = 1.0 / beta;
        let v: Vec<f64> = y.iter().map(|yi| s * yi).collect();
        y = apply(&v);
        if its >= 2 {
            let f = beta / oldb;
            for (yi, ri) in y.iter_mut().zip(&r1) {
                *yi -= f * ri;
            }
        }
        let alfa = dot(&v, &y);
        let f = alfa / beta;
        for (yi, ri) in y.iter_mut().zip(&r2) {
            *yi -= f * ri;
        }
        r1 = std::mem::replace(&mut r2, y);
        y = precond(&r2);
        oldb = beta;
        let bsq = dot(&r2, &y);
        beta = bsq.max(0.0).sqrt();
        tnorm2 += alfa * alfa + oldb * oldb + beta * beta;

        let oldeps = epsln;
        let delta = cs * dbar + sn * alfa;
        let gbar = sn * dbar - cs * alfa;
        epsln = sn * beta;
        dbar = -cs * beta;
        let gamma = gbar.hypot(beta).max(f64::EPSILON);
        cs = gbar / gamma;
        sn = beta / gamma;
        let phi = cs * phibar;
        phibar *= sn;

        let denom = 1.0 / gamma;
        let w1 = std::mem::replace(&mut w2, std::mem::take(&mut w));
        w = v
            .iter()
            .zip(&w1)
            .zip(&w2)
            .map(|((vi, a), b)| (vi - oldeps * a - delta * b) * denom)
            .collect();
        for (xi, wi) in x.iter_mut().zip(&w) {
            *xi += phi * wi;
        }
        if phibar <= rtol * beta1 || beta == 0.0 {
            break;
        }
    }
    (x, its, tnorm2.sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn diag_indefinite(d: Vec<f64>) -> impl Fn(&[f64]) -> Vec<f64> {
        move |x: &[f64]| x.iter().zip(&d).map(|(a, b)| a * b).collect()
    }

    #[test]
    fn solves_indefinite_diagonal() {
        let d: Vec<f64> = (0..50).map(|i| if i % 3 == 0 { -(1.0 + i as f64) } else { 2.0 + i as f64 }).collect();
        let a = diag_indefinite(d.clone());
        let b: Vec<f64> = (0..50).map(|i| (i as f64 * 0.3).sin() + 0.1).collect();
        let id = |x: &[f64]| x.to_vec();
        let out = minres(&a, &id, &b, None, &MinresOptions::default()).unwrap();
        for i in 0..50 {
            assert!((out.x[i] - b[i] / d[i]).abs() < 1e-9);
        }
    }

    #[test]
    fn exact_preconditioner_converges_in_one_step() {
        let d: Vec<f64> = (0..20).map(|i| if i < 5 { -3.0 - i as f64 } else { 1.0 + i as f64 }).collect();
        let a = diag_indefinite(d.clone());
        let inv: Vec<f64> = d.iter().map(|v| 1.0 / v.abs()).collect();
        let p = diag_indefinite(inv);
        let b = vec![1.0; 20];
        let out = minres(&a, &p, &b, None, &MinresOptions::default()).unwrap();
        assert!(out.iterations <= 3);
        assert!(out.residual < 1e-10);
    }

    #[test]
    fn singular_system_reports_failure() {
        // zero eigenvalue with a right-hand side in its direction
        let d = vec![0.0, 1.0, 2.0];
        let a = diag_indefinite(d);
        let id = |x: &[f64]| x.to_vec();
        let opts = MinresOptions { max_iter: 50, ..Default::default() };
        let err = minres(&a, &id, &[1.0, 1.0, 1.0], None, &opts).unwrap_err();
        assert_eq!(err.kind(), "linear_solver");
    }
}
