//! Closed-form spectrum of the linearized operator for a constant background.

use std::f64::consts::PI;

use nalgebra::Matrix3;
use serde::{Deserialize, Serialize};

use crate::error::{Result, TfdwError};
use crate::output::Csv;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct JelliumParams {
    pub nu0: f64,
    /// Neutral background `2 nu0^2`.
    pub rho_b_const: f64,
}

impl JelliumParams {
    pub fn new(nu0: f64) -> Result<Self> {
        if !(nu0 > 0.0) || !nu0.is_finite() {
            return Err(TfdwError::Invalid(format!("nu0 must be positive, got {nu0}")));
        }
        Ok(Self {
            nu0,
            rho_b_const: 2.0 * nu0 * nu0,
        })
    }

    /// `c = (20/9) nu0^{4/3} - (8/9) nu0^{2/3}`.
    pub fn c(&self) -> f64 {
        c_coefficient(self.nu0)
    }

    /// Potential constant of the uniform solution (`-lambda`).
    pub fn gauge(&self) -> f64 {
        -5.0 / 3.0 * self.nu0.powf(4.0 / 3.0) + 4.0 / 3.0 * self.nu0.powf(2.0 / 3.0)
    }
}

pub fn c_coefficient(nu0: f64) -> f64 {
    20.0 / 9.0 * nu0.powf(4.0 / 3.0) - 8.0 / 9.0 * nu0.powf(2.0 / 3.0)
}

fn norm2(xi: [f64; 3]) -> f64 {
    xi[0] * xi[0] + xi[1] * xi[1] + xi[2] * xi[2]
}

/// Symbol of the operator at wave vector `xi`.
pub fn symbol_matrix(p: &JelliumParams, xi: [f64; 3]) -> [[f64; 3]; 3] {
    let x2 = norm2(xi);
    let d = x2 + p.c();
    let n = p.nu0;
    [[d, 0.0, n], [0.0, d, n], [n, n, -x2 / (8.0 * PI)]]
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct JelliumEigenvalues {
    /// Spin channel, eigenvector `(1, -1, 0)`.
    pub lambda1: f64,
    pub lambda_plus: f64,
    pub lambda_minus: f64,
}

impl JelliumEigenvalues {
    pub fn sorted(&self) -> [f64; 3] {
        let mut v = [self.lambda1, self.lambda_plus, self.lambda_minus];
        v.sort_by(f64::total_cmp);
        v
    }

    pub fn min_abs(&self) -> f64 {
        self.lambda1.abs().min(self.lambda_plus.abs()).min(self.lambda_minus.abs())
    }
}

/// Eigenvalues from the exact `2x2` reduction on the complement of `(1,-1,0)`:
/// `[[xi^2 + c, sqrt2 nu0], [sqrt2 nu0, -xi^2/(8 pi)]]`.
pub fn eigenvalues(p: &JelliumParams, xi: [f64; 3]) -> JelliumEigenvalues {
    let x2 = norm2(xi);
    let a = x2 + p.c();
    let d = -x2 / (8.0 * PI);
    let b = 2f64.sqrt() * p.nu0;
    let half_tr = 0.5 * (a + d);
    let rad = (0.25 * (a - d) * (a - d) + b * b).sqrt();
    let lambda_plus = half_tr + rad;
    // product form avoids cancellation in the smaller root
    let lambda_minus = if half_tr >= 0.0 {
        (a * d - b * b) / lambda_plus
    } else {
        half_tr - rad
    };
    JelliumEigenvalues {
        lambda1: a,
        lambda_plus,
        lambda_minus,
    }
}

/// The radical expression for `lambda_pm` as usually displayed; agrees with
/// [`eigenvalues`] and is kept as a cross-check.
pub fn closed_form_pm(p: &JelliumParams, xi: [f64; 3]) -> (f64, f64) {
    let x2 = norm2(xi);
    let c = p.c();
    let e = 8.0 * PI;
    let tr = (e - 1.0) / e * x2 + c;
    let s = (((e + 1.0) / e * x2 + c).powi(2) + 8.0 * p.nu0 * p.nu0).sqrt();
    (0.5 * (tr + s), 0.5 * (tr - s))
}

/// `lambda_+ lambda_-` from the `2x2` determinant.
pub fn product_pm(p: &JelliumParams, xi: [f64; 3]) -> f64 {
    let x2 = norm2(xi);
    -x2 * (x2 + p.c()) / (8.0 * PI) - 2.0 * p.nu0 * p.nu0
}

/// Eigenvalues of the symbol by a dense symmetric solver (ascending).
pub fn symbol_eigenvalues(p: &JelliumParams, xi: [f64; 3]) -> [f64; 3] {
    let m = symbol_matrix(p, xi);
    let mat = Matrix3::from_fn(|i, j| m[i][j]);
    let e = mat.symmetric_eigen();
    let mut v = [e.eigenvalues[0], e.eigenvalues[1], e.eigenvalues[2]];
    v.sort_by(f64::total_cmp);
    v
}

/// Spin-wave stability threshold `(2/5)^{3/2}`: `c > 0` exactly above it.
pub fn sdw_threshold() -> f64 {
    (0.4f64).powf(1.5)
}

/// Charge-wave condition `c > -8 sqrt(pi) nu0`.
pub fn cdw_condition(p: &JelliumParams) -> bool {
    p.c() > -8.0 * PI.sqrt() * p.nu0
}

/// Bisection for a sign change of `f` on `[lo, hi]`.
pub fn bisect(f: impl Fn(f64) -> Result<f64>, mut lo: f64, mut hi: f64, tol: f64) -> Result<f64> {
    let mut flo = f(lo)?;
    let fhi = f(hi)?;
    if flo == 0.0 {
        return Ok(lo);
    }
    if fhi == 0.0 {
        return Ok(hi);
    }
    if flo.signum() == fhi.signum() {
        return Err(TfdwError::Invalid(format!(
            "no sign change on [{lo}, {hi}]: f = {flo}, {fhi}"
        )));
    }
    while hi - lo > tol {
        let mid = 0.5 * (lo + hi);
        let fm = f(mid)?;
        if fm == 0.0 {
            return Ok(mid);
        }
        if fm.signum() == flo.signum() {
            lo = mid;
            flo = fm;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// Tabulated sweep over `nu0` and `|xi|` along the first axis.
#[derive(Clone, Debug)]
pub struct JelliumScan {
    pub table: Csv,
    /// Smallest sampled `nu0` with `c > 0`, refined by bisection.
    pub threshold_estimate: Option<f64>,
}

pub fn jellium_scan(nu0_values: &[f64], xi_values: &[f64]) -> Result<JelliumScan> {
    let mut table = Csv::new(&["nu0", "xi", "lambda1", "lambda_plus", "lambda_minus"]);
    for &nu0 in nu0_values {
        let p = JelliumParams::new(nu0)?;
        for &x in xi_values {
            let e = eigenvalues(&p, [x, 0.0, 0.0]);
            table.push_nums(&[nu0, x, e.lambda1, e.lambda_plus, e.lambda_minus]);
        }
    }
    let mut threshold_estimate = None;
    for w in nu0_values.windows(2) {
        let (a, b) = (w[0], w[1]);
        if c_coefficient(a).signum() != c_coefficient(b).signum() {
            threshold_estimate = Some(bisect(|t| Ok(c_coefficient(t)), a.min(b), a.max(b), 1e-12)?);
            break;
        }
    }
    Ok(JelliumScan {
        table,
        threshold_estimate,
    })
}
