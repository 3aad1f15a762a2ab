//! Not-a-knot cubic spline interpolation expressed as cardinal weights, so
//! the same weights can interpolate scalars and whole fields.

use nalgebra::DMatrix;

use crate::error::{Result, TfdwError};

#[derive(Clone, Debug)]
pub struct CubicSpline {
    knots: Vec<f64>,
    /// Maps sample values to second derivatives at the knots.
    curvature: DMatrix<f64>,
}

impl CubicSpline {
    pub fn new(knots: &[f64]) -> Result<Self> {
        let m = knots.len();
        if m < 2 {
            return Err(TfdwError::Invalid("spline needs at least two knots".into()));
        }
        if knots.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(TfdwError::Invalid("spline knots must be strictly increasing".into()));
        }
        let curvature = if m < 4 {
            DMatrix::zeros(m, m)
        } else {
            not_a_knot_curvature(knots)?
        };
        Ok(Self {
            knots: knots.to_vec(),
            curvature,
        })
    }

    pub fn knots(&self) -> &[f64] {
        &self.knots
    }

    pub fn range(&self) -> (f64, f64) {
        (self.knots[0], *self.knots.last().unwrap())
    }

    fn check(&self, x: f64) -> Result<()> {
        let (lo, hi) = self.range();
        let slack = 1e-12 * (hi - lo);
        if !(x >= lo - slack && x <= hi + slack) {
            return Err(TfdwError::Range { value: x, min: lo, max: hi });
        }
        Ok(())
    }

    fn interval(&self, x: f64) -> usize {
        let m = self.knots.len();
        match self.knots.partition_point(|&k| k <= x) {
            0 => 0,
            p if p >= m => m - 2,
            p => p - 1,
        }
    }

    /// Weights `w` with `s(x) = sum_j w_j f_j`.
    pub fn weights(&self, x: f64) -> Result<Vec<f64>> {
        self.check(x)?;
        let m = self.knots.len();
        if m < 4 {
            return Ok(lagrange_weights(&self.knots, x, false));
        }
        let j = self.interval(x);
        let h = self.knots[j + 1] - self.knots[j];
        let a = (self.knots[j + 1] - x) / h;
        let b = 1.0 - a;
        let (ca, cb) = ((a * a * a - a) * h * h / 6.0, (b * b * b - b) * h * h / 6.0);
        let mut w: Vec<f64> = (0..m)
            .map(|i| ca * self.curvature[(j, i)] + cb * self.curvature[(j + 1, i)])
            .collect();
        if a == 1.0 {
            // exactly on a knot: cardinal
            w.iter_mut().for_each(|v| *v = 0.0);
        }
        w[j] += a;
        w[j + 1] += b;
        Ok(w)
    }

    /// Weights for the first derivative `s'(x)`.
    pub fn derivative_weights(&self, x: f64) -> Result<Vec<f64>> {
        self.check(x)?;
        let m = self.knots.len();
        if m < 4 {
            return Ok(lagrange_weights(&self.knots, x, true));
        }
        let j = self.interval(x);
        let h = self.knots[j + 1] - self.knots[j];
        let a = (self.knots[j + 1] - x) / h;
        let b = 1.0 - a;
        let (ca, cb) = (-(3.0 * a * a - 1.0) * h / 6.0, (3.0 * b * b - 1.0) * h / 6.0);
        let mut w: Vec<f64> = (0..m)
            .map(|i| ca * self.curvature[(j, i)] + cb * self.curvature[(j + 1, i)])
            .collect();
        w[j] -= 1.0 / h;
        w[j + 1] += 1.0 / h;
        Ok(w)
    }

    pub fn eval(&self, values: &[f64], x: f64) -> Result<f64> {
        self.combine(values, &self.weights(x)?)
    }

    pub fn eval_derivative(&self, values: &[f64], x: f64) -> Result<f64> {
        self.combine(values, &self.derivative_weights(x)?)
    }

    fn combine(&self, values: &[f64], w: &[f64]) -> Result<f64> {
        if values.len() != self.knots.len() {
            return Err(TfdwError::Structural(format!(
                "{} values for {} knots",
                values.len(),
                self.knots.len()
            )));
        }
        Ok(values.iter().zip(w).map(|(v, w)| v * w).sum())
    }
}

fn not_a_knot_curvature(x: &[f64]) -> Result<DMatrix<f64>> {
    let m = x.len();
    let h: Vec<f64> = x.windows(2).map(|w| w[1] - w[0]).collect();
    let mut a = DMatrix::zeros(m, m);
    let mut b = DMatrix::zeros(m, m);
    // third derivative continuous across the second and penultimate knots
    a[(0, 0)] = h[1];
    a[(0, 1)] = -(h[0] + h[1]);
    a[(0, 2)] = h[0];
    let (p, q) = (h[m - 3], h[m - 2]);
    a[(m - 1, m - 3)] = q;
    a[(m - 1, m - 2)] = -(p + q);
    a[(m - 1, m - 1)] = p;
    for j in 1..m - 1 {
        a[(j, j - 1)] = h[j - 1];
        a[(j, j)] = 2.0 * (h[j - 1] + h[j]);
        a[(j, j + 1)] = h[j];
        b[(j, j - 1)] = 6.0 / h[j - 1];
        b[(j, j)] = -6.0 / h[j - 1] - 6.0 / h[j];
        b[(j, j + 1)] = 6.0 / h[j];
    }
    a.lu()
        .solve(&b)
        .ok_or_else(|| TfdwError::Degenerate("singular spline system".into()))
}

fn lagrange_weights(x: &[f64], t: f64, derivative: bool) -> Vec<f64> {
    let m = x.len();
    (0..m)
        .map(|i| {
            let denom: f64 = (0..m).filter(|&k| k != i).map(|k| x[i] - x[k]).product();
            if !derivative {
                (0..m).filter(|&k| k != i).map(|k| t - x[k]).product::<f64>() / denom
            } else {
                (0..m)
                    .filter(|&k| k != i)
                    .map(|l| (0..m).filter(|&k| k != i && k != l).map(|k| t - x[k]).product::<f64>())
                    .sum::<f64>()
                    / denom
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reproduces_cubics_exactly() {
        let knots: Vec<f64> = vec![-1.0, -0.6, -0.1, 0.3, 0.35, 0.9, 1.2];
        let s = CubicSpline::new(&knots).unwrap();
        let f = |t: f64| 2.0 - t + 0.5 * t * t - 1.5 * t * t * t;
        let df = |t: f64| -1.0 + t - 4.5 * t * t;
        let vals: Vec<f64> = knots.iter().map(|&t| f(t)).collect();
        for x in [-1.0, -0.77, 0.0, 0.33, 1.1, 1.2] {
            assert!((s.eval(&vals, x).unwrap() - f(x)).abs() < 1e-12);
            assert!((s.eval_derivative(&vals, x).unwrap() - df(x)).abs() < 1e-11);
        }
    }

    #[test]
    fn cardinal_at_knots() {
        let knots: Vec<f64> = (0..9).map(|i| i as f64 * 0.25).collect();
        let s = CubicSpline::new(&knots).unwrap();
        for (j, &k) in knots.iter().enumerate() {
            let w = s.weights(k).unwrap();
            for (i, wi) in w.iter().enumerate() {
                assert_eq!(*wi, if i == j { 1.0 } else { 0.0 });
            }
        }
    }

    #[test]
    fn fourth_order_convergence() {
        let err = |m: usize| {
            let knots: Vec<f64> = (0..m).map(|i| i as f64 / (m - 1) as f64).collect();
            let s = CubicSpline::new(&knots).unwrap();
            let vals: Vec<f64> = knots.iter().map(|t| t.sin()).collect();
            (0..200)
                .map(|i| {
                    let x = i as f64 / 199.0;
                    (s.eval(&vals, x).unwrap() - x.sin()).abs()
                })
                .fold(0.0, f64::max)
        };
        let rate = (err(11) / err(21)).log2();
        assert!(rate > 3.7, "rate {rate}");
    }

    #[test]
    fn rejects_extrapolation() {
        let s = CubicSpline::new(&[0.0, 1.0, 2.0, 3.0]).unwrap();
        assert_eq!(s.weights(3.5).unwrap_err().kind(), "range");
    }
}
