//! Newton iteration on the supercell with the Jacobian frozen at `u0`:
//! `u^{k+1} = u^k - ℒ_{u0}^{-1} F(u^k)`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Result, TfdwError};
use crate::krylov::MinresOptions;
use crate::lattice_grid::ScalarField;
use crate::linop::{GapOptions, LinearizedOperator};
use crate::output::Csv;
use crate::residual::residual;
use crate::state::{Crystal, State};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NewtonOptions {
    /// Stop when `||F(u^k)||` drops below this.
    pub tol: f64,
    pub max_iter: usize,
    /// Inner tolerance as a fraction of the outer target.
    pub inner_factor: f64,
    pub inner_max_iter: usize,
    /// Re-linearize at every iterate instead of freezing at `u0`.
    pub full_newton: bool,
    /// Consecutive increment ratios above one before giving up.
    pub divergence_patience: usize,
}

impl Default for NewtonOptions {
    fn default() -> Self {
        Self {
            tol: 1e-10,
            max_iter: 50,
            inner_factor: 0.01,
            inner_max_iter: 5000,
            full_newton: false,
            divergence_patience: 3,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NewtonTrace {
    /// `||F(u^k)||` in averaged `(L^2_n)^3`, starting with `u0`.
    pub iterates: Vec<f64>,
    /// `||u^{k+1} - u^k||` in averaged `(H^2_n)^3`.
    pub increments: Vec<f64>,
    /// `increments[k] / increments[k-1]`.
    pub contraction_ratios: Vec<f64>,
    pub distance_to_u0: f64,
    pub distance_to_cb: Option<f64>,
    pub converged: bool,
}

impl NewtonTrace {
    pub fn contraction_max(&self) -> f64 {
        self.contraction_ratios.iter().cloned().fold(0.0, f64::max)
    }

    pub fn steps(&self) -> usize {
        self.increments.len()
    }

    /// `step, residual, increment, ratio`; missing entries are left empty.
    pub fn csv(&self) -> Csv {
        let mut c = Csv::new(&["step", "residual", "increment", "ratio"]);
        let cell = |v: Option<&f64>| v.map(|x| crate::output::fmt_num(*x)).unwrap_or_default();
        for (k, r) in self.iterates.iter().enumerate() {
            let ratio = if k >= 1 { self.contraction_ratios.get(k - 1) } else { None };
            c.push(vec![k.to_string(), crate::output::fmt_num(*r), cell(self.increments.get(k)), cell(ratio)]);
        }
        c
    }
}

/// Relative inner tolerance giving an absolute residual of
/// `inner_factor * tol`; the ratio is the same in averaged and flat norms.
fn inner_options(opts: &NewtonOptions, fnorm: f64) -> MinresOptions {
    let rel = (opts.inner_factor * opts.tol / fnorm).clamp(1e-13, 0.5);
    MinresOptions {
        rtol: rel,
        max_iter: opts.inner_max_iter,
        ..Default::default()
    }
}

/// Iterate from `u0` on the supercell crystal `sc` with field `h`.
/// `u_cb` is only used for the reported distance.
pub fn newton_solve(sc: &Crystal, u0: &State, h: &ScalarField, u_cb: Option<&State>, opts: &NewtonOptions) -> Result<(State, NewtonTrace)> {
    sc.grid.ensure_same(u0.grid())?;
    let mut op = LinearizedOperator::new(u0, h)?;
    let mut u = u0.clone();
    let mut iterates = Vec::new();
    let mut increments: Vec<f64> = Vec::new();
    let mut ratios = Vec::new();
    let mut growth = 0;
    let mut converged = false;
    for k in 0..=opts.max_iter {
        let f = residual(sc, &u, h)?.newton_map();
        let fnorm = f.l2_norm();
        iterates.push(fnorm);
        if !fnorm.is_finite() {
            return Err(TfdwError::NewtonFailure("residual became non-finite".into()));
        }
        if fnorm <= opts.tol {
            converged = true;
            break;
        }
        if k == opts.max_iter {
            break;
        }
        if opts.full_newton && k > 0 {
            op = LinearizedOperator::new(&u, h)?;
        }
        let d = op
            .solve(&f, &inner_options(opts, fnorm))
            .map_err(|e| match e {
                TfdwError::LinearSolver { iterations, residual, .. } => TfdwError::LinearSolver {
                    iterations,
                    residual,
                    gap_estimate: op
                        .fiber([0.0; 3])
                        .and_then(|f| f.gap(&GapOptions::default()))
                        .map(|g| g.gap)
                        .ok(),
                },
                other => other,
            })?;
        let inc = d.h2_norm();
        if let Some(&prev) = increments.last() {
            let r = if prev > 0.0 { inc / prev } else { 0.0 };
            ratios.push(r);
            growth = if r > 1.0 { growth + 1 } else { 0 };
            if growth >= opts.divergence_patience {
                increments.push(inc);
                return Err(TfdwError::Divergence { step: k, ratios });
            }
        }
        increments.push(inc);
        u = u.add_triple(&d.scale(-1.0))?;
    }
    let distance_to_u0 = u.diff(u0)?.h2_norm();
    let distance_to_cb = match u_cb {
        Some(c) => Some(u.diff(c)?.h2_norm()),
        None => None,
    };
    Ok((
        u,
        NewtonTrace {
            iterates,
            increments,
            contraction_ratios: ratios,
            distance_to_u0,
            distance_to_cb,
            converged,
        },
    ))
}

/// Probe estimate of `||ℒ_u - ℒ_{u_ref}||`: the largest
/// `||(ℒ_u - ℒ_ref) v|| / ||v||` over a fixed set of probes (unit constants in
/// each component and seeded smooth random triples).
pub fn operator_drift(u: &State, u_ref: &State, h: &ScalarField) -> Result<f64> {
    u.grid().ensure_same(u_ref.grid())?;
    let a = LinearizedOperator::new(u, h)?;
    let b = LinearizedOperator::new(u_ref, h)?;
    let grid = u.grid();
    let n = grid.len();
    let mut probes: Vec<Vec<f64>> = (0..3)
        .map(|c| {
            let mut v = vec![0.0; 3 * n];
            v[c * n..(c + 1) * n].iter_mut().for_each(|x| *x = 1.0);
            v
        })
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed);
    for _ in 0..6 {
        let mut v = Vec::with_capacity(3 * n);
        for _ in 0..3 {
            let coeffs: Vec<(f64, f64, [f64; 3])> = (0..4)
                .map(|_| (rng.gen::<f64>() - 0.5, rng.gen::<f64>() * 6.3, [rng.gen_range(-2..=2) as f64, rng.gen_range(-2..=2) as f64, rng.gen_range(-2..=2) as f64]))
                .collect();
            let f = ScalarField::from_fractional(grid, |t| {
                coeffs
                    .iter()
                    .map(|(c, ph, m)| c * (2.0 * std::f64::consts::PI * (m[0] * t[0] + m[1] * t[1] + m[2] * t[2]) + ph).cos())
                    .sum()
            });
            v.extend_from_slice(f.values());
        }
        probes.push(v);
    }
    let mut worst: f64 = 0.0;
    for p in &probes {
        let pn = crate::lattice_grid::dot(p, p).sqrt();
        if pn == 0.0 {
            continue;
        }
        let d: Vec<f64> = a.apply_flat(p).iter().zip(b.apply_flat(p)).map(|(x, y)| x - y).collect();
        worst = worst.max(crate::lattice_grid::dot(&d, &d).sqrt() / pn);
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cell::{solve_cell, CellInit, CellOptions};
    use crate::lattice_grid::{GridSpec, LatticeSpec};
    use crate::state::InitPreset;

    fn solved() -> (Crystal, State) {
        let c = Crystal::new(LatticeSpec::chain(4.0, 1.6, 0.9).unwrap(), GridSpec::cell([16, 1, 1])).unwrap();
        let sol = solve_cell(&c, 0.0, &CellInit::Preset(InitPreset::Uniform), &CellOptions::default()).unwrap();
        (c, sol.state)
    }

    #[test]
    fn exact_start_takes_no_steps() {
        let (c, u) = solved();
        let h = ScalarField::zeros(&c.grid);
        let (out, trace) = newton_solve(&c, &u, &h, Some(&u), &NewtonOptions::default()).unwrap();
        assert!(trace.converged);
        assert_eq!(trace.steps(), 0);
        assert_eq!(trace.distance_to_u0, 0.0);
        assert_eq!(trace.distance_to_cb, Some(0.0));
        assert_eq!(out.to_flat(), u.to_flat());
        assert_eq!(trace.csv().len(), 1);
    }

    #[test]
    fn perturbed_start_contracts_back() {
        let (c, u) = solved();
        let h = ScalarField::constant(&c.grid, 0.0);
        let bump = ScalarField::from_fractional(&c.grid, |t| 1e-3 * (2.0 * std::f64::consts::PI * t[0]).cos());
        let start = State::new(u.nu_plus.checked_add(&bump).unwrap(), u.nu_minus.clone(), u.v.clone(), u.gauge).unwrap();
        let (out, trace) = newton_solve(&c, &start, &h, Some(&u), &NewtonOptions::default()).unwrap();
        assert!(trace.converged);
        assert!(trace.contraction_max() < 0.1, "{:?}", trace.contraction_ratios);
        assert!(trace.distance_to_cb.unwrap() < 1e-8);
        assert!(out.diff(&u).unwrap().h2_norm() < 1e-8);
        let csv = trace.csv().render();
        assert!(csv.starts_with("step,residual,increment,ratio\n"));
    }

    #[test]
    fn drift_vanishes_at_reference_and_sees_potential_shifts() {
        let (c, u) = solved();
        let h = ScalarField::zeros(&c.grid);
        assert_eq!(operator_drift(&u, &u, &h).unwrap(), 0.0);
        let mut shifted = u.clone();
        shifted.gauge += 0.25;
        // a constant potential shift adds 0.25 to the diagonal amplitude blocks
        let d = operator_drift(&shifted, &u, &h).unwrap();
        assert!((d - 0.25).abs() < 1e-12, "{d}");
    }

    #[test]
    fn iteration_cap_reports_non_convergence() {
        let (c, u) = solved();
        let h = ScalarField::zeros(&c.grid);
        let start = u.normalized(1.5).unwrap();
        let opts = NewtonOptions { max_iter: 1, ..Default::default() };
        let (_, trace) = newton_solve(&c, &start, &h, None, &opts).unwrap();
        assert!(!trace.converged);
        assert_eq!(trace.iterates.len(), 2);
        assert!(trace.distance_to_cb.is_none());
    }
}
