//! Log-log slope fitting for convergence studies.

use crate::error::{Result, TfdwError};

/// Ordinary least-squares slope and intercept of `y` against `x`.
pub fn ols(x: &[f64], y: &[f64]) -> Result<(f64, f64)> {
    if x.len() != y.len() || x.len() < 2 {
        return Err(TfdwError::Invalid(format!(
            "slope fit needs two or more paired points, got {} and {}",
            x.len(),
            y.len()
        )));
    }
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxx: f64 = x.iter().map(|a| (a - mx) * (a - mx)).sum();
    if !(sxx > 0.0) {
        return Err(TfdwError::Degenerate("slope fit with identical abscissae".into()));
    }
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let slope = sxy / sxx;
    Ok((slope, my - slope * mx))
}

/// Slope of `log v` against `log eps`. With `exclude_largest`, the point
/// with the largest `eps` is dropped first.
pub fn loglog_slope(eps: &[f64], values: &[f64], exclude_largest: bool) -> Result<f64> {
    let mut pts: Vec<(f64, f64)> = eps.iter().copied().zip(values.iter().copied()).collect();
    if pts.iter().any(|&(e, v)| !(e > 0.0) || !(v > 0.0)) {
        return Err(TfdwError::Invalid("log-log fit needs positive data".into()));
    }
    if exclude_largest && pts.len() > 2 {
        let (imax, _) = pts
            .iter()
            .enumerate()
            .max_by(|a, b| a.1 .0.total_cmp(&b.1 .0))
            .unwrap();
        pts.remove(imax);
    }
    let lx: Vec<f64> = pts.iter().map(|p| p.0.ln()).collect();
    let ly: Vec<f64> = pts.iter().map(|p| p.1.ln()).collect();
    Ok(ols(&lx, &ly)?.0)
}
