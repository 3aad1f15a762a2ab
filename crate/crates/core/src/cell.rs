//! Ground states of the periodic cell problem with a constant field.

use std::f64::consts::PI;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::energy::{energy_constant_h, energy_supercell, EnergyBreakdown};
use crate::error::{Result, TfdwError};
use crate::krylov::MinresOptions;
use crate::lattice_grid::{dot, tfw, ScalarField};
use crate::linop::{stability_scan, LinearizedOperator, StabilityOptions, StabilityReport, XiGrid};
use crate::residual::{amplitude_gradient, eliminate_potential, residual};
use crate::state::{Crystal, InitPreset, State};

/// Newton iteration on the full `(nu_+, nu_-, V)` system.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NewtonPolishOptions {
    pub tol: f64,
    pub max_iter: usize,
    pub nu_floor: f64,
    /// Upper bound for the relative inner MINRES tolerance.
    pub inner_rtol: f64,
    pub inner_max_iter: usize,
}

impl Default for NewtonPolishOptions {
    fn default() -> Self {
        Self {
            tol: 1e-10,
            max_iter: 40,
            nu_floor: 1e-8,
            inner_rtol: 1e-2,
            inner_max_iter: 3000,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CellOptions {
    /// Largest admissible `|h|`.
    pub h_max: f64,
    /// Hand over from descent to Newton below this residual.
    pub switch_tol: f64,
    pub descent_max_iter: usize,
    /// Positivity constant; defaults to half the solution's minimum.
    pub c_nu: Option<f64>,
    pub newton: NewtonPolishOptions,
}

impl Default for CellOptions {
    fn default() -> Self {
        Self {
            h_max: 1.0,
            switch_tol: 1e-4,
            descent_max_iter: 20000,
            c_nu: None,
            newton: NewtonPolishOptions::default(),
        }
    }
}

/// Starting point for a cell solve.
#[derive(Clone, Debug)]
pub enum CellInit {
    Preset(InitPreset),
    State(Box<State>),
}

#[derive(Clone, Debug)]
pub struct CellSolution {
    pub state: State,
    pub h_value: f64,
    pub energy: EnergyBreakdown,
    pub residual_norm: f64,
    pub min_nu: f64,
    pub c_nu: f64,
    pub c_nu_ok: bool,
    pub preset: Option<InitPreset>,
    pub descent_iterations: usize,
    pub newton_residuals: Vec<f64>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CellManifest {
    pub h_value: f64,
    pub gauge: f64,
    pub energy: EnergyBreakdown,
    pub residual_norm: f64,
    pub min_nu: f64,
    pub c_nu: f64,
    pub c_nu_ok: bool,
    pub preset: Option<InitPreset>,
}

impl CellSolution {
    pub fn manifest(&self) -> CellManifest {
        CellManifest {
            h_value: self.h_value,
            gauge: self.state.gauge,
            energy: self.energy,
            residual_norm: self.residual_norm,
            min_nu: self.min_nu,
            c_nu: self.c_nu,
            c_nu_ok: self.c_nu_ok,
            preset: self.preset.clone(),
        }
    }

    /// Write `nu_plus.tfw`, `nu_minus.tfw`, `v.tfw` and `manifest.json`.
    pub fn save(&self, dir: &Path) -> Result<()> {
        save_state(&self.state, dir)?;
        let json = serde_json::to_vec_pretty(&self.manifest())?;
        tfw::atomic_write(&dir.join("manifest.json"), &json)
    }

    pub fn load(crystal: &Crystal, dir: &Path) -> Result<Self> {
        let m: CellManifest = serde_json::from_slice(&std::fs::read(dir.join("manifest.json"))?)?;
        let state = load_state(crystal, dir, m.gauge)?;
        Ok(Self {
            state,
            h_value: m.h_value,
            energy: m.energy,
            residual_norm: m.residual_norm,
            min_nu: m.min_nu,
            c_nu: m.c_nu,
            c_nu_ok: m.c_nu_ok,
            preset: m.preset,
            descent_iterations: 0,
            newton_residuals: Vec::new(),
        })
    }
}

pub(crate) fn save_state(state: &State, dir: &Path) -> Result<()> {
    tfw::write_field(&dir.join("nu_plus.tfw"), &state.nu_plus, "nu_plus")?;
    tfw::write_field(&dir.join("nu_minus.tfw"), &state.nu_minus, "nu_minus")?;
    tfw::write_field(&dir.join("v.tfw"), &state.v, "v")
}

pub(crate) fn load_state(crystal: &Crystal, dir: &Path, gauge: f64) -> Result<State> {
    let g = Some(&crystal.grid);
    State::new(
        tfw::read_field(&dir.join("nu_plus.tfw"), g)?,
        tfw::read_field(&dir.join("nu_minus.tfw"), g)?,
        tfw::read_field(&dir.join("v.tfw"), g)?,
        gauge,
    )
}

/// Amplitudes for a preset, normalized to `Z` electrons per cell.
pub fn initial_state(crystal: &Crystal, preset: &InitPreset) -> Result<State> {
    let grid = &crystal.grid;
    let nu = (crystal.z() / (2.0 * crystal.cell_volume())).sqrt();
    let base = match preset {
        InitPreset::Uniform => ScalarField::constant(grid, nu),
        InitPreset::UniformPlusNoise { seed, amplitude } => {
            let mut rng = ChaCha8Rng::seed_from_u64(*seed);
            let dims = grid.dims();
            let spec = grid.spec();
            let span = |a: usize| if dims[a] > 1 { 2i32 } else { 0 };
            let mut modes = Vec::new();
            for m0 in -span(0)..=span(0) {
                for m1 in -span(1)..=span(1) {
                    for m2 in -span(2)..=span(2) {
                        if [m0, m1, m2] == [0, 0, 0] {
                            continue;
                        }
                        let phase = rng.gen::<f64>() * 2.0 * PI;
                        let amp = rng.gen::<f64>() - 0.5;
                        modes.push(([m0, m1, m2], amp, phase));
                    }
                }
            }
            ScalarField::from_fractional(grid, |t| {
                let mut s = 0.0;
                for (m, amp, phase) in &modes {
                    let arg: f64 = (0..3).map(|a| m[a] as f64 * t[a] * spec.supercell[a] as f64).sum();
                    s += amp * (2.0 * PI * arg + phase).cos();
                }
                nu * (1.0 + amplitude * s / modes.len().max(1) as f64)
            })
        }
    };
    let s = State::new(base.clone(), base, ScalarField::zeros(grid), 0.0)?;
    s.normalized(crystal.z())
}

/// Energy of amplitudes with the potential eliminated.
fn reduced_energy(crystal: &Crystal, nu_p: &ScalarField, nu_m: &ScalarField, h: &ScalarField) -> Result<f64> {
    let s = State::new(nu_p.clone(), nu_m.clone(), ScalarField::zeros(nu_p.grid()), 0.0)?;
    Ok(energy_supercell(crystal, &s, h)?.total)
}

fn helmholtz_inverse(f: &ScalarField) -> ScalarField {
    let g = f.grid().clone();
    f.with_values(g.apply_real_symbol(f.values(), |i| 1.0 / (1.0 + g.k2()[i])))
}

fn retract(crystal: &Crystal, p: &ScalarField, m: &ScalarField) -> Result<(ScalarField, ScalarField)> {
    let q = p.zip_map(m, |a, b| a * a + b * b)?.avg_integral();
    if !(q > 0.0) {
        return Err(TfdwError::Degenerate("density vanished during descent".into()));
    }
    let c = (crystal.z() / q).sqrt();
    Ok((p.scale(c), m.scale(c)))
}

struct DescentOutcome {
    state: State,
    iterations: usize,
}

/// Preconditioned projected gradient descent on the amplitudes.
fn descend(crystal: &Crystal, start: &State, h: &ScalarField, opts: &CellOptions) -> Result<DescentOutcome> {
    let (mut p, mut m) = retract(crystal, &start.nu_plus, &start.nu_minus)?;
    let mut energy = reduced_energy(crystal, &p, &m, h)?;
    let mut trace = vec![energy];
    let mut alpha = 1.0;
    let dv = crystal.grid.dv();
    for it in 0..opts.descent_max_iter {
        let state = eliminate_potential(crystal, p.clone(), m.clone(), h)?;
        let r = residual(crystal, &state, h)?.norm();
        if r <= opts.switch_tol {
            return Ok(DescentOutcome { state, iterations: it });
        }
        let (gp, gm) = amplitude_gradient(crystal, &p, &m, h)?;
        let (pgp, pgm) = (helmholtz_inverse(&gp), helmholtz_inverse(&gm));
        let (pp, pm) = (helmholtz_inverse(&p), helmholtz_inverse(&m));
        let num = dot(pgp.values(), p.values()) + dot(pgm.values(), m.values());
        let den = dot(pp.values(), p.values()) + dot(pm.values(), m.values());
        let mu = num / den;
        let dp = pgp.zip_map(&pp, |g, q| -(g - mu * q))?;
        let dm = pgm.zip_map(&pm, |g, q| -(g - mu * q))?;
        // directional derivative of the energy (gradient is 2 A)
        let slope = 2.0 * dv * (dot(gp.values(), dp.values()) + dot(gm.values(), dm.values()));
        if slope >= 0.0 {
            return Err(TfdwError::DescentFailure {
                iterations: it,
                reason: "search direction is not a descent direction".into(),
                energy_trace: trace,
            });
        }
        let mut accepted = false;
        for _ in 0..60 {
            let tp = p.zip_map(&dp, |a, b| a + alpha * b)?;
            let tm = m.zip_map(&dm, |a, b| a + alpha * b)?;
            let (np, nm) = retract(crystal, &tp, &tm)?;
            let e = reduced_energy(crystal, &np, &nm, h)?;
            if e <= energy + 1e-4 * alpha * slope {
                p = np;
                m = nm;
                energy = e;
                accepted = true;
                alpha = (alpha * 1.5).min(50.0);
                break;
            }
            alpha *= 0.5;
        }
        trace.push(energy);
        if !accepted {
            // energy cannot decrease further at working precision
            let state = eliminate_potential(crystal, p.clone(), m.clone(), h)?;
            let r = residual(crystal, &state, h)?.norm();
            if r <= opts.switch_tol * 100.0 {
                return Ok(DescentOutcome { state, iterations: it });
            }
            return Err(TfdwError::DescentFailure {
                iterations: it,
                reason: format!("line search stalled at residual {r:e}"),
                energy_trace: trace,
            });
        }
    }
    Err(TfdwError::DescentFailure {
        iterations: opts.descent_max_iter,
        reason: "iteration limit reached".into(),
        energy_trace: trace,
    })
}

/// Newton iteration `u <- u - ℒ_u^{-1} F(u)` until `||F|| <= tol`.
pub fn newton_refine(crystal: &Crystal, start: &State, h: &ScalarField, opts: &NewtonPolishOptions) -> Result<(State, Vec<f64>)> {
    let mut u = start.clone();
    let mut history = Vec::new();
    for _ in 0..=opts.max_iter {
        let f = residual(crystal, &u, h)?.newton_map();
        let fnorm = f.l2_norm();
        history.push(fnorm);
        if fnorm <= opts.tol {
            return Ok((u, history));
        }
        if !fnorm.is_finite() {
            return Err(TfdwError::NewtonFailure("residual became non-finite".into()));
        }
        if history.len() > opts.max_iter {
            break;
        }
        let op = LinearizedOperator::new(&u, h)?;
        let rtol = (opts.inner_rtol.min(fnorm)).max(1e-3 * opts.tol / fnorm).max(1e-13);
        let mopts = MinresOptions {
            rtol,
            max_iter: opts.inner_max_iter,
            ..Default::default()
        };
        let d = op.solve(&f, &mopts)?;
        u = u.add_triple(&d.scale(-1.0))?;
        let min_nu = u.min_nu();
        if min_nu < opts.nu_floor {
            return Err(TfdwError::PositivityLoss {
                min_nu,
                floor: opts.nu_floor,
            });
        }
    }
    Err(TfdwError::NewtonFailure(format!(
        "no convergence in {} steps, residual history {:?}",
        opts.max_iter, history
    )))
}

/// Cell ground state for constant `h_value`.
pub fn solve_cell(crystal: &Crystal, h_value: f64, init: &CellInit, opts: &CellOptions) -> Result<CellSolution> {
    if h_value.abs() > opts.h_max {
        return Err(TfdwError::Range {
            value: h_value,
            min: -opts.h_max,
            max: opts.h_max,
        });
    }
    let h = ScalarField::constant(&crystal.grid, h_value);
    let (start, preset) = match init {
        CellInit::Preset(p) => (initial_state(crystal, p)?, Some(p.clone())),
        CellInit::State(s) => {
            crystal.grid.ensure_same(s.grid())?;
            ((**s).clone(), None)
        }
    };
    let r0 = residual(crystal, &start, &h)?.norm();
    let (mid, descent_iterations) = if r0 <= opts.switch_tol {
        (start, 0)
    } else {
        let d = descend(crystal, &start, &h, opts)?;
        (d.state, d.iterations)
    };
    let (state, newton_residuals) = newton_refine(crystal, &mid, &h, &opts.newton)?;
    finish(crystal, state, h_value, preset, descent_iterations, newton_residuals, opts.c_nu)
}

pub(crate) fn finish(
    crystal: &Crystal,
    state: State,
    h_value: f64,
    preset: Option<InitPreset>,
    descent_iterations: usize,
    newton_residuals: Vec<f64>,
    c_nu: Option<f64>,
) -> Result<CellSolution> {
    let state = state.normalized(crystal.z())?;
    let h = ScalarField::constant(&crystal.grid, h_value);
    let residual_norm = residual(crystal, &state, &h)?.norm();
    let energy = energy_constant_h(crystal, &state, h_value)?;
    let min_nu = state.min_nu();
    let c_nu = c_nu.unwrap_or(0.5 * min_nu);
    Ok(CellSolution {
        state,
        h_value,
        energy,
        residual_norm,
        min_nu,
        c_nu,
        c_nu_ok: min_nu >= c_nu,
        preset,
        descent_iterations,
        newton_residuals,
    })
}

/// Stability scan at a converged cell solution.
pub fn verify_minimizer(sol: &CellSolution, xi_grid: &XiGrid, opts: &StabilityOptions) -> Result<StabilityReport> {
    let h = ScalarField::constant(sol.state.grid(), sol.h_value);
    stability_scan(&sol.state, &h, xi_grid, opts)
}
