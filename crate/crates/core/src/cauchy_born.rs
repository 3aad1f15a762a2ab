//! The Cauchy-Born map `h -> u_CB(.; h)` built by continuation in a constant
//! field, its energy, the magnetization-constrained dual, and the evaluation
//! of Cauchy-Born fields under a slowly varying `h`.

use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cell::{finish, load_state, newton_refine, save_state, solve_cell, verify_minimizer, CellInit, CellOptions, CellSolution};
use crate::energy::energy_constant_h;
use crate::error::{Result, TfdwError};
use crate::krylov::MinresOptions;
use crate::lattice_grid::{dot, tfw, Grid, ScalarField};
use crate::linop::{LinearizedOperator, StabilityOptions, XiGrid};
use crate::output::Csv;
use crate::residual::residual;
use crate::spline::CubicSpline;
use crate::state::{Crystal, InitPreset, State, Triple};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CbOptions {
    pub cell: CellOptions,
    pub anchor: InitPreset,
    /// Run the fiber scan at every sample.
    pub check_stability: bool,
    pub stability: StabilityOptions,
    pub xi_grid: XiGrid,
    /// Relative MINRES tolerance for derivative solves.
    pub derivative_rtol: f64,
}

impl Default for CbOptions {
    fn default() -> Self {
        Self {
            cell: CellOptions::default(),
            anchor: InitPreset::Uniform,
            check_stability: true,
            stability: StabilityOptions::default(),
            xi_grid: XiGrid::MonkhorstPack { density: 4 },
            derivative_rtol: 1e-12,
        }
    }
}

#[derive(Clone, Debug)]
pub struct CbSample {
    pub solution: CellSolution,
    /// `du/dh`, potential component including the gauge derivative.
    pub dudh: Triple,
    /// Cell-averaged energy including the Zeeman term.
    pub e_cb: f64,
    /// `integral_Gamma (nu_+^2 - nu_-^2)`.
    pub m_tot: f64,
    pub gap: Option<f64>,
}

#[derive(Clone, Debug)]
pub struct CbTable {
    pub crystal: Crystal,
    pub samples: Vec<CbSample>,
    spline: CubicSpline,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct CbManifest {
    h_samples: Vec<f64>,
    e_cb: Vec<f64>,
    m_tot: Vec<f64>,
    gaps: Vec<Option<f64>>,
    gauges: Vec<f64>,
    residual_norms: Vec<f64>,
    c_nu: f64,
}

/// Sample positions `k * step` covering `[lo, hi]`, ends included.
pub fn sample_points(lo: f64, hi: f64, step: f64) -> Result<Vec<f64>> {
    if !(lo <= 0.0 && hi >= 0.0 && step > 0.0) || !(lo.is_finite() && hi.is_finite()) {
        return Err(TfdwError::Invalid(format!(
            "h range [{lo}, {hi}] must contain 0 and step {step} must be positive"
        )));
    }
    let side = |end: f64| -> Vec<f64> {
        let k = ((end.abs() / step) - 1e-9).ceil().max(0.0) as usize;
        (1..=k).map(|i| (i as f64 * step).min(end.abs()) * end.signum()).collect()
    };
    let mut pts: Vec<f64> = side(lo).into_iter().rev().collect();
    pts.push(0.0);
    pts.extend(side(hi));
    Ok(pts)
}

fn derivative_solve(op: &LinearizedOperator, rhs: &Triple, rtol: f64) -> Result<Triple> {
    op.solve(
        rhs,
        &MinresOptions {
            rtol,
            max_iter: 5000,
            ..Default::default()
        },
    )
}

/// Right-hand side `(nu_+, -nu_-, 0)` of the field derivative system.
pub fn field_source(state: &State) -> Triple {
    Triple {
        plus: state.nu_plus.clone(),
        minus: state.nu_minus.scale(-1.0),
        v: ScalarField::zeros(state.grid()),
    }
}

fn make_sample(crystal: &Crystal, solution: CellSolution, opts: &CbOptions) -> Result<CbSample> {
    let h = solution.h_value;
    let gap = if opts.check_stability {
        let report = verify_minimizer(&solution, &opts.xi_grid, &opts.stability)?;
        if !report.is_stable() {
            return Err(TfdwError::Stability {
                gap: report.global_gap,
                threshold: report.threshold,
            });
        }
        Some(report.global_gap)
    } else {
        None
    };
    let op = LinearizedOperator::constant_h(&solution.state, h)?;
    let dudh = derivative_solve(&op, &field_source(&solution.state), opts.derivative_rtol)?;
    let e_cb = solution.energy.per_volume(crystal.cell_volume()).total;
    let m_tot = solution.state.magnetization_per_cell();
    Ok(CbSample {
        solution,
        dudh,
        e_cb,
        m_tot,
        gap,
    })
}

/// Continue from the `h = 0` anchor over `[lo, hi]` in steps of `step`.
pub fn build_cb_table(crystal: &Crystal, h_range: (f64, f64), step: f64, opts: &CbOptions) -> Result<CbTable> {
    let pts = sample_points(h_range.0, h_range.1, step)?;
    let anchor_sol = solve_cell(crystal, 0.0, &CellInit::Preset(opts.anchor.clone()), &opts.cell)?;
    let c_nu = anchor_sol.c_nu;
    let anchor = make_sample(crystal, anchor_sol, opts)?;
    let zero = pts.iter().position(|&h| h == 0.0).expect("zero sample");
    let forward: Vec<f64> = pts[zero + 1..].to_vec();
    let backward: Vec<f64> = pts[..zero].iter().rev().copied().collect();
    let march = |targets: &[f64]| -> Result<Vec<CbSample>> {
        let mut out: Vec<CbSample> = Vec::new();
        for &h in targets {
            let prev = out.last().unwrap_or(&anchor);
            let stop = |reason: String| TfdwError::ContinuationStop {
                last_good_h: prev.solution.h_value,
                reason,
            };
            let dh = h - prev.solution.h_value;
            let predictor = prev.solution.state.add_triple(&prev.dudh.scale(dh))?;
            let field = ScalarField::constant(&crystal.grid, h);
            let (state, hist) = newton_refine(crystal, &predictor, &field, &opts.cell.newton)
                .map_err(|e| stop(format!("corrector failed at h = {h}: {e}")))?;
            let sol = finish(crystal, state, h, None, 0, hist, Some(c_nu))?;
            if !sol.c_nu_ok {
                return Err(stop(format!("min nu {} below C_nu {} at h = {h}", sol.min_nu, c_nu)));
            }
            let sample = make_sample(crystal, sol, opts).map_err(|e| stop(format!("sample at h = {h}: {e}")))?;
            out.push(sample);
        }
        Ok(out)
    };
    let (fw, bw) = (march(&forward)?, march(&backward)?);
    let mut samples: Vec<CbSample> = bw.into_iter().rev().collect();
    samples.push(anchor);
    samples.extend(fw);
    CbTable::from_samples(crystal.clone(), samples)
}

impl CbTable {
    pub fn from_samples(crystal: Crystal, samples: Vec<CbSample>) -> Result<Self> {
        let hs: Vec<f64> = samples.iter().map(|s| s.solution.h_value).collect();
        let spline = CubicSpline::new(&hs)?;
        Ok(Self {
            crystal,
            samples,
            spline,
        })
    }

    pub fn h_samples(&self) -> Vec<f64> {
        self.samples.iter().map(|s| s.solution.h_value).collect()
    }

    pub fn range(&self) -> (f64, f64) {
        self.spline.range()
    }

    pub fn spline(&self) -> &CubicSpline {
        &self.spline
    }

    pub fn anchor(&self) -> &CbSample {
        self.samples
            .iter()
            .find(|s| s.solution.h_value == 0.0)
            .expect("table contains the anchor")
    }

    pub fn e_cb(&self, h: f64) -> Result<f64> {
        let v: Vec<f64> = self.samples.iter().map(|s| s.e_cb).collect();
        self.spline.eval(&v, h)
    }

    pub fn m_of_h(&self, h: f64) -> Result<f64> {
        let v: Vec<f64> = self.samples.iter().map(|s| s.m_tot).collect();
        self.spline.eval(&v, h)
    }

    /// Spline derivative of `E_CB`.
    pub fn de_cb_dh(&self, h: f64) -> Result<f64> {
        let v: Vec<f64> = self.samples.iter().map(|s| s.e_cb).collect();
        self.spline.eval_derivative(&v, h)
    }

    /// Flat `[nu_+ | nu_- | V + gauge]` interpolated in `h`.
    pub fn flat_at(&self, h: f64) -> Result<Vec<f64>> {
        let w = self.spline.weights(h)?;
        let flats: Vec<Vec<f64>> = self.samples.iter().map(|s| s.solution.state.to_flat()).collect();
        Ok(combine(&flats, &w))
    }

    pub fn state_at(&self, h: f64) -> Result<State> {
        State::from_flat(&self.crystal.grid, &self.flat_at(h)?)
    }

    pub fn dudh_at(&self, h: f64) -> Result<Triple> {
        let w = self.spline.weights(h)?;
        let flats: Vec<Vec<f64>> = self.samples.iter().map(|s| s.dudh.to_flat()).collect();
        Triple::from_flat(&self.crystal.grid, &combine(&flats, &w))
    }

    /// `h, E_CB, m_tot` per sample.
    pub fn csv(&self) -> Csv {
        let mut c = Csv::new(&["h", "E_CB", "m_tot"]);
        for s in &self.samples {
            c.push_nums(&[s.solution.h_value, s.e_cb, s.m_tot]);
        }
        c
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        for (k, s) in self.samples.iter().enumerate() {
            let sub = dir.join(format!("sample_{k:03}"));
            std::fs::create_dir_all(&sub)?;
            save_state(&s.solution.state, &sub)?;
            tfw::write_field(&sub.join("dudh_plus.tfw"), &s.dudh.plus, "dudh_plus")?;
            tfw::write_field(&sub.join("dudh_minus.tfw"), &s.dudh.minus, "dudh_minus")?;
            tfw::write_field(&sub.join("dudh_v.tfw"), &s.dudh.v, "dudh_v")?;
        }
        let m = CbManifest {
            h_samples: self.h_samples(),
            e_cb: self.samples.iter().map(|s| s.e_cb).collect(),
            m_tot: self.samples.iter().map(|s| s.m_tot).collect(),
            gaps: self.samples.iter().map(|s| s.gap).collect(),
            gauges: self.samples.iter().map(|s| s.solution.state.gauge).collect(),
            residual_norms: self.samples.iter().map(|s| s.solution.residual_norm).collect(),
            c_nu: self.anchor().solution.c_nu,
        };
        tfw::atomic_write(&dir.join("manifest.json"), &serde_json::to_vec_pretty(&m)?)?;
        tfw::atomic_write(&dir.join("cb_curve.csv"), self.csv().render().as_bytes())
    }

    /// Reload a table; energies are recomputed from the stored fields.
    pub fn load(crystal: &Crystal, dir: &Path) -> Result<Self> {
        let m: CbManifest = serde_json::from_slice(&std::fs::read(dir.join("manifest.json"))?)?;
        let mut samples = Vec::with_capacity(m.h_samples.len());
        for (k, &h) in m.h_samples.iter().enumerate() {
            let sub = dir.join(format!("sample_{k:03}"));
            let state = load_state(crystal, &sub, m.gauges[k])?;
            let g = Some(&crystal.grid);
            let dudh = Triple::new(
                tfw::read_field(&sub.join("dudh_plus.tfw"), g)?,
                tfw::read_field(&sub.join("dudh_minus.tfw"), g)?,
                tfw::read_field(&sub.join("dudh_v.tfw"), g)?,
            )?;
            let solution = finish_loaded(crystal, state, h, m.c_nu)?;
            samples.push(CbSample {
                e_cb: solution.energy.per_volume(crystal.cell_volume()).total,
                m_tot: solution.state.magnetization_per_cell(),
                solution,
                dudh,
                gap: m.gaps[k],
            });
        }
        Self::from_samples(crystal.clone(), samples)
    }
}

fn finish_loaded(crystal: &Crystal, state: State, h: f64, c_nu: f64) -> Result<CellSolution> {
    let field = ScalarField::constant(&crystal.grid, h);
    let residual_norm = residual(crystal, &state, &field)?.norm();
    let energy = energy_constant_h(crystal, &state, h)?;
    let min_nu = state.min_nu();
    Ok(CellSolution {
        state,
        h_value: h,
        energy,
        residual_norm,
        min_nu,
        c_nu,
        c_nu_ok: min_nu >= c_nu,
        preset: None,
        descent_iterations: 0,
        newton_residuals: Vec::new(),
    })
}

pub(crate) fn combine(flats: &[Vec<f64>], w: &[f64]) -> Vec<f64> {
    let n = flats[0].len();
    let mut out = vec![0.0; n];
    for (f, &wj) in flats.iter().zip(w) {
        if wj == 0.0 {
            continue;
        }
        for (o, x) in out.iter_mut().zip(f) {
            *o += wj * x;
        }
    }
    out
}

/// Evaluate cell-periodic sample fields at every supercell point with the
/// local value of `h`: `out(x) = sum_j w_j(h(x)) f_j(z(x))`.
pub(crate) fn pointwise_interpolate(spline: &CubicSpline, cell: &Grid, flats: &[Vec<f64>], h_field: &ScalarField) -> Result<Vec<f64>> {
    let grid = h_field.grid();
    if grid.spec().resolution != cell.spec().resolution {
        return Err(TfdwError::Structural("supercell resolution differs from the table grid".into()));
    }
    let nc = cell.len();
    let n = grid.len();
    let vals: Vec<[f64; 3]> = (0..n)
        .into_par_iter()
        .map(|i| {
            let w = spline.weights(h_field.values()[i])?;
            let z = cell.flat_index(grid.cell_point(i));
            let mut acc = [0.0; 3];
            for (f, &wj) in flats.iter().zip(&w) {
                for (c, a) in acc.iter_mut().enumerate() {
                    *a += wj * f[c * nc + z];
                }
            }
            Ok(acc)
        })
        .collect::<Result<_>>()?;
    let mut out = vec![0.0; 3 * n];
    for (i, v) in vals.iter().enumerate() {
        for c in 0..3 {
            out[c * n + i] = v[c];
        }
    }
    Ok(out)
}

/// `nu_pm(x) = nu_pm,CB(x; h(x))`, `V(x) = V_CB(x; h(x))` on the supercell of
/// `h_field`; `h_field` carries the slow variation `h(eps x)` already.
pub fn cb_field(table: &CbTable, h_field: &ScalarField) -> Result<State> {
    let flats: Vec<Vec<f64>> = table.samples.iter().map(|s| s.solution.state.to_flat()).collect();
    let out = pointwise_interpolate(&table.spline, &table.crystal.grid, &flats, h_field)?;
    State::from_flat(h_field.grid(), &out)
}

/// Result of the magnetization-constrained cell problem.
#[derive(Clone, Debug)]
pub struct DualSolution {
    pub state: State,
    /// Multiplier of the magnetization constraint, acting as a field.
    pub eta: f64,
    pub m_tot: f64,
    /// Cell-averaged energy without the Zeeman term.
    pub energy: f64,
    pub iterations: usize,
}

/// Bordered Newton iteration for `F(u; eta) = 0`, `m_tot(u) = m_target`,
/// with separate potential constants `gauge - eta` and `gauge + eta` on the
/// two spin channels.
pub fn dual_solve(crystal: &Crystal, m_target: f64, start: &State, eta0: f64, opts: &CbOptions) -> Result<DualSolution> {
    let z = crystal.z();
    if !(m_target.abs() < z) {
        return Err(TfdwError::Infeasible(format!(
            "magnetization {m_target} not attainable with {z} electrons per cell"
        )));
    }
    let tol = opts.cell.newton.tol;
    let w = crystal.grid.avg_weight();
    let mut u = start.clone();
    let mut eta = eta0;
    for it in 0..=opts.cell.newton.max_iter {
        let field = ScalarField::constant(&crystal.grid, eta);
        let f = residual(crystal, &u, &field)?.newton_map();
        let c = u.magnetization_per_cell() - m_target;
        if f.l2_norm() <= tol && c.abs() <= tol * z {
            // Newton only controls charge to the residual tolerance
            let u = u.normalized(z)?;
            let energy = energy_constant_h(crystal, &u, eta)?.per_volume(crystal.cell_volume()).internal();
            return Ok(DualSolution {
                m_tot: u.magnetization_per_cell(),
                state: u,
                eta,
                energy,
                iterations: it,
            });
        }
        let op = LinearizedOperator::new(&u, &field)?;
        let rtol = (opts.cell.newton.inner_rtol.min(f.l2_norm().max(c.abs()))).max(1e-13);
        let x1 = derivative_solve(&op, &f, rtol)?;
        let x2 = derivative_solve(&op, &field_source(&u), rtol.min(1e-10))?;
        let dm = |t: &Triple| 2.0 * w * (dot(u.nu_plus.values(), t.plus.values()) - dot(u.nu_minus.values(), t.minus.values()));
        let chi = dm(&x2);
        if !(chi.abs() > 0.0) {
            return Err(TfdwError::Infeasible("vanishing magnetic susceptibility".into()));
        }
        let deta = (dm(&x1) - c) / chi;
        let step = x1.scale(-1.0).add(&x2.scale(deta))?;
        u = u.add_triple(&step)?;
        eta += deta;
        if u.min_nu() < opts.cell.newton.nu_floor {
            return Err(TfdwError::PositivityLoss {
                min_nu: u.min_nu(),
                floor: opts.cell.newton.nu_floor,
            });
        }
    }
    Err(TfdwError::NewtonFailure(format!(
        "constrained solve for m = {m_target} did not converge"
    )))
}

/// `Ẽ_CB(m)` starting from the unconstrained `h = 0` solution.
pub fn dual_energy(crystal: &Crystal, m_target: f64, opts: &CbOptions) -> Result<f64> {
    let anchor = solve_cell(crystal, 0.0, &CellInit::Preset(opts.anchor.clone()), &opts.cell)?;
    let steps = ((m_target.abs() / (0.05 * crystal.z())).ceil() as usize).max(1);
    let mut u = anchor.state;
    let mut eta = 0.0;
    let mut energy = 0.0;
    for k in 1..=steps {
        let m = m_target * k as f64 / steps as f64;
        let d = dual_solve(crystal, m, &u, eta, opts)?;
        u = d.state;
        eta = d.eta;
        energy = d.energy;
    }
    Ok(energy)
}

/// One row of the duality comparison.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LegendreRow {
    pub h: f64,
    pub e_cb: f64,
    pub dual_min: f64,
    pub m_star: f64,
    pub rel_error: f64,
}

/// Tabulated dual energies on a uniform magnetization grid.
#[derive(Clone, Debug)]
pub struct DualTable {
    pub m_values: Vec<f64>,
    pub energies: Vec<f64>,
    pub etas: Vec<f64>,
    spline: CubicSpline,
}

impl DualTable {
    pub fn energy(&self, m: f64) -> Result<f64> {
        self.spline.eval(&self.energies, m)
    }
}

fn invert_m(table: &CbTable, m: f64) -> Result<f64> {
    let (lo, hi) = table.range();
    crate::jellium::bisect(|h| Ok(table.m_of_h(h)? - m), lo, hi, 1e-14 * (hi - lo).max(1.0))
}

/// Solve the constrained problem on `count` uniform magnetizations spanning
/// the table's magnetization range, warm-started from the table.
pub fn build_dual_table(table: &CbTable, count: usize, opts: &CbOptions) -> Result<DualTable> {
    if count < 2 {
        return Err(TfdwError::Invalid("dual table needs at least two points".into()));
    }
    let (lo, hi) = table.range();
    let (m_lo, m_hi) = (table.m_of_h(lo)?, table.m_of_h(hi)?);
    let m_values: Vec<f64> = (0..count)
        .map(|i| m_lo + (m_hi - m_lo) * i as f64 / (count - 1) as f64)
        .collect();
    let solved = m_values
        .par_iter()
        .map(|&m| {
            let h = invert_m(table, m)?;
            dual_solve(&table.crystal, m, &table.state_at(h)?, h, opts)
        })
        .collect::<Result<Vec<_>>>()?;
    let spline = CubicSpline::new(&m_values)?;
    Ok(DualTable {
        energies: solved.iter().map(|d| d.energy).collect(),
        etas: solved.iter().map(|d| d.eta).collect(),
        m_values,
        spline,
    })
}

/// Golden-section minimum of a unimodal function on `[a, b]`.
pub fn golden_min(f: impl Fn(f64) -> Result<f64>, mut a: f64, mut b: f64, tol: f64) -> Result<(f64, f64)> {
    let r = 0.5 * (5f64.sqrt() - 1.0);
    let mut c = b - r * (b - a);
    let mut d = a + r * (b - a);
    let (mut fc, mut fd) = (f(c)?, f(d)?);
    while b - a > tol {
        if fc < fd {
            b = d;
            d = c;
            fd = fc;
            c = b - r * (b - a);
            fc = f(c)?;
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + r * (b - a);
            fd = f(d)?;
        }
    }
    let x = 0.5 * (a + b);
    Ok((x, f(x)?))
}

/// Compare `E_CB(h)` with `min_m (Ẽ_CB(m) - h m / |Gamma|)` at each `h`.
pub fn legendre_check(table: &CbTable, dual: &DualTable, h_values: &[f64]) -> Result<Vec<LegendreRow>> {
    let vol = table.crystal.cell_volume();
    let (m_lo, m_hi) = (dual.m_values[0], *dual.m_values.last().unwrap());
    h_values
        .iter()
        .map(|&h| {
            let e_cb = table.e_cb(h)?;
            let (m_star, dual_min) = golden_min(|m| Ok(dual.energy(m)? - h * m / vol), m_lo, m_hi, 1e-11 * (m_hi - m_lo))?;
            Ok(LegendreRow {
                h,
                e_cb,
                dual_min,
                m_star,
                rel_error: (e_cb - dual_min).abs() / e_cb.abs().max(f64::MIN_POSITIVE),
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lattice_grid::{GridSpec, LatticeSpec};

    fn chain() -> Crystal {
        Crystal::new(LatticeSpec::modulated_chain(0.4, 0.3).unwrap(), GridSpec::cell([16, 1, 1])).unwrap()
    }

    #[test]
    fn samples_cover_range() {
        assert_eq!(sample_points(-0.1, 0.1, 0.05).unwrap(), vec![-0.1, -0.05, 0.0, 0.05, 0.1]);
        let p = sample_points(0.0, 0.12, 0.05).unwrap();
        assert_eq!(p, vec![0.0, 0.05, 0.1, 0.12]);
        assert!(sample_points(0.1, 0.2, 0.05).is_err());
    }

    #[test]
    fn table_symmetry_and_envelope() {
        let c = chain();
        let t = build_cb_table(&c, (-0.02, 0.02), 0.005, &CbOptions::default()).unwrap();
        assert_eq!(t.samples.len(), 9);
        for k in 0..4 {
            let (a, b) = (&t.samples[k], &t.samples[8 - k]);
            assert!((a.m_tot + b.m_tot).abs() < 1e-8);
        }
        assert_eq!(t.m_of_h(0.0).unwrap(), t.anchor().m_tot);
        assert!(t.anchor().m_tot.abs() < 1e-10);
        // envelope: dE/dh = -m_tot / |Gamma|
        let d = t.de_cb_dh(0.01).unwrap();
        assert!((d + t.m_of_h(0.01).unwrap() / c.cell_volume()).abs() < 1e-6, "{d}");
        let a = t.anchor();
        assert!(a.dudh.plus.checked_add(&a.dudh.minus).unwrap().max_abs() < 1e-9);
    }

    #[test]
    fn constant_field_gives_periodic_extension() {
        let c = chain();
        let t = build_cb_table(&c, (-0.04, 0.04), 0.02, &CbOptions::default()).unwrap();
        let sc = c.supercell([3, 1, 1]).unwrap();
        let u = cb_field(&t, &ScalarField::constant(&sc.grid, 0.02)).unwrap();
        let ext = t.samples[3].solution.state.extend_to(&sc.grid).unwrap();
        assert!(u.diff(&ext).unwrap().l2_norm() < 1e-14);
    }
}
