//! Acceptance suite: one line per criterion, non-zero exit if any fails.
//!
//! Runs as a plain binary (`harness = false`) so the report is always shown.

use std::f64::consts::PI;
use std::path::Path;
use std::process::Command;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tfdw_core::cauchy_born::{build_cb_table, build_dual_table, cb_field, legendre_check, CbOptions};
use tfdw_core::cell::{solve_cell, CellInit, CellOptions};
use tfdw_core::convergence::loglog_slope;
use tfdw_core::energy::energy_constant_h;
use tfdw_core::jellium::{self, JelliumParams};
use tfdw_core::lattice_grid::{Background, BackgroundMode, GridSpec, LatticeSpec, ScalarField};
use tfdw_core::linop::{stability_scan, symmetry_defect, LinearizedOperator, StabilityOptions, XiGrid};
use tfdw_core::residual::{eliminate_potential, residual};
use tfdw_core::state::{Crystal, InitPreset, State, Triple};
use tfdw_core::study::{eps_study, EpsStudyConfig};
use tfdw_core::two_scale::{assemble_u0, build_correctors, macro_supercell, AnsatzOrder, CorrectorOptions, MacroField};
use tfdw_core::Result;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn chain_crystal(n_points: usize) -> Crystal {
    Crystal::new(LatticeSpec::chain(4.0, 1.6, 0.9).unwrap(), GridSpec::cell([n_points, 1, 1])).unwrap()
}

fn jellium_state(nu0: f64, res: usize) -> (Crystal, State) {
    let c = Crystal::new(LatticeSpec::jellium(nu0).unwrap(), GridSpec::cell([res; 3])).unwrap();
    let p = JelliumParams::new(nu0).unwrap();
    let s = State::uniform(&c.grid, nu0, nu0, p.gauge());
    (c, s)
}

/// Numeric fiber spectra against the union of closed-form eigenvalues over
/// the discrete Bloch modes: per axis, the `D` wave numbers congruent to
/// `xi` (in units of `2 pi`) that lie in `[-D/2, D/2)`.
fn criterion_1() -> Result<Outcome> {
    let res = 4usize;
    let mut worst: f64 = 0.0;
    for nu0 in [0.3, 0.5, 1.0] {
        let (_, s) = jellium_state(nu0, res);
        let h = ScalarField::zeros(s.grid());
        let op = LinearizedOperator::new(&s, &h)?;
        let p = JelliumParams::new(nu0)?;
        for i in 0..21 {
            let t = -1.0 + 2.0 * i as f64 / 20.0;
            let frac = [0.5 * t, 0.3 * t, -0.2 * t];
            let xi = frac.map(|f| 2.0 * PI * f);
            let (numeric, _) = op.fiber(xi)?.dense_eigen();
            let half = res as f64 / 2.0;
            let axis: Vec<Vec<f64>> = frac
                .iter()
                .map(|&f| {
                    let first = -half + (f + half).rem_euclid(1.0);
                    (0..res).map(|j| 2.0 * PI * (first + j as f64)).collect()
                })
                .collect();
            let mut analytic = Vec::new();
            for &q0 in &axis[0] {
                for &q1 in &axis[1] {
                    for &q2 in &axis[2] {
                        let e = jellium::eigenvalues(&p, [q0, q1, q2]);
                        analytic.extend([e.lambda1, e.lambda_plus, e.lambda_minus]);
                    }
                }
            }
            analytic.sort_by(f64::total_cmp);
            let mut numeric = numeric;
            numeric.sort_by(f64::total_cmp);
            if numeric.len() != analytic.len() {
                return Ok(outcome(false, format!("spectrum sizes differ: {} vs {}", numeric.len(), analytic.len())));
            }
            for (a, b) in numeric.iter().zip(&analytic) {
                worst = worst.max((a - b).abs());
            }
        }
    }
    Ok(outcome(worst <= 1e-8, format!("max |numeric - analytic| = {worst:.3e} (tol 1e-8)")))
}

/// Rayleigh quotient of the constant spin wave `(1, -1, 0)` at `xi = 0`.
fn spin_channel_eigenvalue(nu0: f64) -> Result<f64> {
    let (_, s) = jellium_state(nu0, 4);
    let op = LinearizedOperator::new(&s, &ScalarField::zeros(s.grid()))?;
    let g = s.grid();
    let v = Triple::new(ScalarField::constant(g, 1.0), ScalarField::constant(g, -1.0), ScalarField::zeros(g))?;
    Ok(op.apply(&v)?.inner(&v)? / v.inner(&v)?)
}

fn criterion_2() -> Result<Outcome> {
    let nu = jellium::bisect(spin_channel_eigenvalue, 0.1, 1.0, 1e-12)?;
    let expected = 0.4f64.powf(1.5);
    let err = (nu - expected).abs();
    let cdw = jellium::cdw_condition(&JelliumParams::new(nu)?);
    Ok(outcome(
        err <= 1e-6 && cdw,
        format!("threshold {nu:.12} vs (2/5)^(3/2) = {expected:.12}, |err| = {err:.2e} (tol 1e-6); charge-wave condition holds: {cdw}"),
    ))
}

fn smooth_field(grid: &std::sync::Arc<tfdw_core::lattice_grid::Grid>, rng: &mut ChaCha8Rng, amp: f64) -> ScalarField {
    let modes: Vec<([f64; 3], f64, f64)> = (0..5)
        .map(|_| {
            let m = [rng.gen_range(-2..=2) as f64, rng.gen_range(-2..=2) as f64, rng.gen_range(-2..=2) as f64];
            (m, amp * (rng.gen::<f64>() - 0.5), rng.gen::<f64>() * 2.0 * PI)
        })
        .collect();
    ScalarField::from_fractional(grid, |t| {
        modes
            .iter()
            .map(|(m, c, ph)| c * (2.0 * PI * (m[0] * t[0] + m[1] * t[1] + m[2] * t[2]) + ph).cos())
            .sum()
    })
}

fn criterion_3() -> Result<Outcome> {
    let z = 1.0;
    let bg = Background::Modes {
        modes: vec![
            BackgroundMode { g: [1, 0, 0], re: 0.15, im: 0.0 },
            BackgroundMode { g: [0, 1, 1], re: 0.05, im: 0.04 },
        ],
    };
    let crystal = Crystal::new(LatticeSpec::cubic(1.0, z, bg)?, GridSpec::cell([8, 8, 8]))?;
    let g = crystal.grid.clone();
    let h = ScalarField::zeros(&g);
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let normalize = |p: &ScalarField, m: &ScalarField| -> Result<(ScalarField, ScalarField)> {
        let q = p.zip_map(m, |a, b| a * a + b * b)?.integral();
        let c = (z / q).sqrt();
        Ok((p.scale(c), m.scale(c)))
    };
    let energy = |p: &ScalarField, m: &ScalarField| -> Result<f64> {
        let (p, m) = normalize(p, m)?;
        let s = eliminate_potential(&crystal, p, m, &h)?;
        Ok(energy_constant_h(&crystal, &s, 0.0)?.total)
    };
    let steps = [0.04, 0.02, 0.01, 0.005];
    let mut worst: f64 = 0.0;
    let mut slopes = Vec::new();
    for _ in 0..10 {
        let base = 0.5;
        let p0 = smooth_field(&g, &mut rng, 0.2).map(|x| base + x);
        let m0 = smooth_field(&g, &mut rng, 0.2).map(|x| 0.8 * base + x);
        let (p0, m0) = normalize(&p0, &m0)?;
        let mut dp = smooth_field(&g, &mut rng, 1.0);
        let mut dm = smooth_field(&g, &mut rng, 1.0);
        // tangent to the charge constraint
        let along = (p0.inner(&dp)? + m0.inner(&dm)?) / (p0.inner(&p0)? + m0.inner(&m0)?);
        dp = dp.checked_sub(&p0.scale(along))?;
        dm = dm.checked_sub(&m0.scale(along))?;
        let s = eliminate_potential(&crystal, p0.clone(), m0.clone(), &h)?;
        let r = residual(&crystal, &s, &h)?;
        let pairing = 2.0 * g.dv() * (dot(r.r_plus.values(), dp.values()) + dot(r.r_minus.values(), dm.values()));
        let mut errs = Vec::new();
        for &t in &steps {
            let ep = energy(&p0.checked_add(&dp.scale(t))?, &m0.checked_add(&dm.scale(t))?)?;
            let em = energy(&p0.checked_sub(&dp.scale(t))?, &m0.checked_sub(&dm.scale(t))?)?;
            errs.push(((ep - em) / (2.0 * t) - pairing).abs());
        }
        let slope = loglog_slope(&steps, &errs, false)?;
        worst = worst.max((slope - 2.0).abs());
        slopes.push(slope);
    }
    let lo = slopes.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = slopes.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    Ok(outcome(worst <= 0.2, format!("Richardson slopes in [{lo:.3}, {hi:.3}] (target 2.0 +- 0.2)")))
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn criterion_4() -> Result<Outcome> {
    let crystal = chain_crystal(32);
    let sol = solve_cell(&crystal, 0.0, &CellInit::Preset(InitPreset::Uniform), &CellOptions::default())?;
    let op = LinearizedOperator::new(&sol.state, &ScalarField::zeros(&crystal.grid))?;
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let n = crystal.grid.len();
    let mut worst: f64 = 0.0;
    for _ in 0..20 {
        let mut pick = || -> Result<Triple> {
            let flat: Vec<f64> = (0..3 * n).map(|_| rng.gen::<f64>() - 0.5).collect();
            Triple::from_flat(&crystal.grid, &flat)
        };
        let (u, v) = (pick()?, pick()?);
        worst = worst.max(symmetry_defect(&op, &u, &v)?);
    }
    Ok(outcome(
        worst <= 1e-10,
        format!("max |<Lu,v> - <u,Lv>| / (|u||v|) = {worst:.3e} (tol 1e-10), cell residual {:.1e}", sol.residual_norm),
    ))
}

fn criterion_5() -> Result<Outcome> {
    let crystal = chain_crystal(32);
    let table = build_cb_table(&crystal, (-0.02, 0.02), 0.005, &CbOptions::default())?;
    let knot = 0.01;
    let macro_field = MacroField::constant(knot);
    let set = build_correctors(&table, &macro_field, AnsatzOrder::Second, &CorrectorOptions::default())?;
    let mut worst_res: f64 = 0.0;
    let mut worst_diff: f64 = 0.0;
    for n in [2, 4, 8] {
        let sc = macro_supercell(&crystal, &macro_field, n)?;
        let h = macro_field.sample(&sc.grid)?;
        let u0 = assemble_u0(&table, &set, &macro_field, &sc.grid, AnsatzOrder::Second)?;
        let ucb = cb_field(&table, &h)?;
        let d = u0.diff(&ucb)?;
        worst_diff = worst_diff.max(d.plus.max_abs().max(d.minus.max_abs()).max(d.v.max_abs()).max((u0.gauge - ucb.gauge).abs()));
        worst_res = worst_res.max(residual(&sc, &u0, &h)?.norm());
    }
    Ok(outcome(
        worst_res <= 1e-9 && worst_diff == 0.0,
        format!("max ||F(u0)|| = {worst_res:.3e} (tol 1e-9), max |u0 - u_CB| = {worst_diff:.1e} (exact)"),
    ))
}

fn criteria_6_to_8() -> Result<[Outcome; 3]> {
    let cfg = EpsStudyConfig::quasi_1d(0.02, vec![4, 6, 8, 12, 16])?;
    let study = eps_study(&cfg)?;
    let s = &study.slopes;
    let get = |v: Option<f64>| v.unwrap_or(f64::NAN);
    let (r2, r1) = (get(s.ansatz_residual), get(s.ansatz_residual_order1));
    let c6 = outcome(
        r2 >= 2.5 && r2 - r1 >= 0.7,
        format!("ansatz residual slope {r2:.3} (min 2.5); without second order {r1:.3}, degradation {:.3} (min 0.7)", r2 - r1),
    );
    let mut rows = study.rows.clone();
    rows.sort_by_key(|r| r.n);
    let largest: Vec<(usize, f64)> = rows.iter().rev().take(2).map(|r| (r.n, r.contraction_max)).collect();
    let worst = largest.iter().map(|x| x.1).fold(0.0, f64::max);
    let c7 = outcome(worst <= 0.5, format!("max contraction ratio for n = {largest:?}: {worst:.3e} (max 0.5)"));
    let (cb, u0) = (get(s.cb_distance), get(s.newton_distance_u0));
    let c8 = outcome(
        cb >= 0.8 && u0 >= 2.5,
        format!("||u* - u_CB|| slope {cb:.3} (min 0.8); ||u* - u0|| slope {u0:.3} (min 2.5)"),
    );
    Ok([c6, c7, c8])
}

fn criterion_9() -> Result<Outcome> {
    let crystal = chain_crystal(32);
    let opts = CbOptions::default();
    let table = build_cb_table(&crystal, (-0.02, 0.02), 0.0025, &opts)?;
    let dual = build_dual_table(&table, 33, &opts)?;
    let (lo, hi) = table.range();
    let hs: Vec<f64> = (1..=5).map(|i| lo + (hi - lo) * i as f64 / 6.0).collect();
    let rows = legendre_check(&table, &dual, &hs)?;
    let worst = rows.iter().map(|r| r.rel_error).fold(0.0, f64::max);
    Ok(outcome(worst <= 1e-6, format!("max relative gap at h = {hs:.4?}: {worst:.3e} (tol 1e-6)")))
}

fn criterion_10() -> Result<Outcome> {
    let crystal = chain_crystal(32);
    let sol = solve_cell(&crystal, 0.0, &CellInit::Preset(InitPreset::Uniform), &CellOptions::default())?;
    let mut ms = Vec::new();
    let mut stable = true;
    for n in [1, 2, 4] {
        let sc = crystal.supercell([n, 1, 1])?;
        let state = sol.state.extend_to(&sc.grid)?;
        let report = stability_scan(&state, &ScalarField::zeros(&sc.grid), &XiGrid::Gamma, &StabilityOptions::default())?;
        stable &= report.is_stable();
        ms.push(report.m);
    }
    let lo = ms.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = ms.iter().cloned().fold(0.0, f64::max);
    let spread = (hi - lo) / lo;
    Ok(outcome(
        stable && spread <= 0.05,
        format!("M on n = 1, 2, 4: {ms:.6?}, relative spread {spread:.2e} (max 5%), stable: {stable}"),
    ))
}

fn run_eps_study(config: &Path, out: &Path, threads: &str) -> std::result::Result<Vec<u8>, String> {
    let status = Command::new(env!("CARGO_BIN_EXE_tfdw"))
        .args(["eps-study", "--seed", "7", "--threads", threads, "--config"])
        .arg(config)
        .arg("--out")
        .arg(out)
        .output()
        .map_err(|e| e.to_string())?;
    if !status.status.success() {
        return Err(String::from_utf8_lossy(&status.stderr).into_owned());
    }
    std::fs::read(out.join("eps_study.csv")).map_err(|e| e.to_string())
}

fn criterion_11() -> std::result::Result<Outcome, String> {
    let config = Path::new(env!("CARGO_MANIFEST_DIR")).join("configs/quasi_1d.json");
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let a = run_eps_study(&config, &dir.path().join("a"), "4")?;
    let b = run_eps_study(&config, &dir.path().join("b"), "1")?;
    Ok(outcome(
        a == b && !a.is_empty(),
        format!("eps_study.csv identical across runs (4 and 1 threads): {} ({} bytes)", a == b, a.len()),
    ))
}

fn report(id: &str, name: &str, started: Instant, r: std::result::Result<Outcome, String>, failures: &mut usize) {
    let secs = started.elapsed().as_secs_f64();
    match r {
        Ok(o) => {
            if !o.pass {
                *failures += 1;
            }
            println!("criterion {id:>2} [{}] {name}: {} ({secs:.1} s)", if o.pass { "PASS" } else { "FAIL" }, o.detail);
        }
        Err(e) => {
            *failures += 1;
            println!("criterion {id:>2} [FAIL] {name}: error: {e} ({secs:.1} s)");
        }
    }
}

fn main() {
    let mut failures = 0;
    let e = |r: Result<Outcome>| r.map_err(|e| e.to_string());

    let t = Instant::now();
    report("1", "jellium oracle equivalence", t, e(criterion_1()), &mut failures);
    let t = Instant::now();
    report("2", "spin-wave threshold", t, e(criterion_2()), &mut failures);
    let t = Instant::now();
    report("3", "variational consistency", t, e(criterion_3()), &mut failures);
    let t = Instant::now();
    report("4", "self-adjointness", t, e(criterion_4()), &mut failures);
    let t = Instant::now();
    report("5", "constant-field degeneracy", t, e(criterion_5()), &mut failures);
    let t = Instant::now();
    match criteria_6_to_8() {
        Ok([c6, c7, c8]) => {
            report("6", "ansatz residual order", t, Ok(c6), &mut failures);
            report("7", "Newton contraction", t, Ok(c7), &mut failures);
            report("8", "Cauchy-Born and ansatz distances", t, Ok(c8), &mut failures);
        }
        Err(err) => {
            for (id, name) in [("6", "ansatz residual order"), ("7", "Newton contraction"), ("8", "Cauchy-Born and ansatz distances")] {
                report(id, name, t, Err(err.to_string()), &mut failures);
            }
        }
    }
    let t = Instant::now();
    report("9", "Legendre duality", t, e(criterion_9()), &mut failures);
    let t = Instant::now();
    report("10", "stability constant independent of n", t, e(criterion_10()), &mut failures);
    let t = Instant::now();
    report("11", "determinism", t, criterion_11(), &mut failures);

    if failures > 0 {
        println!("acceptance: {failures} criterion(s) failed");
        std::process::exit(1);
    }
    println!("acceptance: all 11 criteria passed");
}
