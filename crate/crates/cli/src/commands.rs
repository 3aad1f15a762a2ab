//! One function per subcommand. Each writes its artifacts under the output
//! directory and returns a JSON summary for stdout.

use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::Serialize;
use serde_json::{json, Value};
use tfdw_core::cauchy_born::{build_cb_table, build_dual_table, cb_field, legendre_check, CbTable};
use tfdw_core::cell::{solve_cell, verify_minimizer, CellInit};
use tfdw_core::jellium::{jellium_scan, sdw_threshold};
use tfdw_core::lattice_grid::tfw::{atomic_write, write_field};
use tfdw_core::lattice_grid::ScalarField;
use tfdw_core::linop::stability_scan;
use tfdw_core::output::{fmt_num, Csv};
use tfdw_core::residual::residual;
use tfdw_core::study::{eps_study, run_supercell, EpsStudyConfig};
use tfdw_core::two_scale::{assemble_u0, build_correctors, macro_supercell, AnsatzOrder};

use crate::config::StudyConfig;
use crate::error::CliError;

/// Supercell sizes used when the config lists none.
pub const DEFAULT_N_VALUES: [usize; 5] = [4, 6, 8, 12, 16];

pub struct Context {
    pub config: StudyConfig,
    pub out: PathBuf,
    pub seed: Option<u64>,
    pub verbose: bool,
}

impl Context {
    fn log(&self, msg: &str) {
        if self.verbose {
            eprintln!("tfdw: {msg}");
        }
    }

    fn write_text(&self, name: &str, text: &str) -> Result<PathBuf, CliError> {
        let p = self.out.join(name);
        atomic_write(&p, text.as_bytes())?;
        Ok(p)
    }

    fn write_json(&self, name: &str, value: &impl Serialize) -> Result<PathBuf, CliError> {
        let mut text = serde_json::to_string_pretty(value)?;
        text.push('\n');
        self.write_text(name, &text)
    }

    fn eps_config(&self) -> Result<EpsStudyConfig, CliError> {
        self.config.eps_config(self.seed, &DEFAULT_N_VALUES)
    }

    fn build_table(&self, eps: &EpsStudyConfig) -> Result<CbTable, CliError> {
        let crystal = self.config.crystal()?;
        let range = eps.table_range();
        self.log(&format!("building Cauchy-Born table on [{}, {}] with step {}", range.0, range.1, eps.table_step));
        Ok(build_cb_table(&crystal, range, eps.table_step, &eps.cb)?)
    }
}

fn rel(p: &Path, root: &Path) -> String {
    p.strip_prefix(root).unwrap_or(p).display().to_string()
}

pub fn solve_cell_cmd(ctx: &Context) -> Result<Value, CliError> {
    let crystal = ctx.config.crystal()?;
    let h = ctx.config.constant_h()?;
    let init = CellInit::Preset(ctx.config.init_preset(ctx.seed));
    ctx.log(&format!("solving cell problem at h = {h}"));
    let sol = solve_cell(&crystal, h, &init, &ctx.config.cell)?;
    let dir = ctx.out.join("cell");
    sol.save(&dir)?;
    let summary = json!({
        "command": "solve-cell",
        "manifest": sol.manifest(),
        "descent_iterations": sol.descent_iterations,
        "newton_residuals": sol.newton_residuals,
        "electrons_per_cell": sol.state.electrons_per_cell(),
        "magnetization_per_cell": sol.state.magnetization_per_cell(),
        "output": rel(&dir, &ctx.out),
    });
    ctx.write_json("solve_cell.json", &summary)?;
    Ok(summary)
}

pub fn jellium_scan_cmd(ctx: &Context) -> Result<Value, CliError> {
    let j = &ctx.config.jellium;
    let nu0: Vec<f64> = (0..j.nu0_count)
        .map(|i| j.nu0_min + (j.nu0_max - j.nu0_min) * i as f64 / (j.nu0_count - 1) as f64)
        .collect();
    let scan = jellium_scan(&nu0, &j.xi_values)?;
    ctx.write_text("jellium_scan.csv", &scan.table.render())?;
    let summary = json!({
        "command": "jellium-scan",
        "threshold_estimate": scan.threshold_estimate,
        "threshold_closed_form": sdw_threshold(),
        "rows": scan.table.len(),
    });
    ctx.write_json("jellium_scan.json", &summary)?;
    Ok(summary)
}

pub fn stability_scan_cmd(ctx: &Context) -> Result<Value, CliError> {
    let crystal = ctx.config.crystal()?;
    let h = ctx.config.constant_h()?;
    let init = CellInit::Preset(ctx.config.init_preset(ctx.seed));
    let sol = solve_cell(&crystal, h, &init, &ctx.config.cell)?;
    let ns = ctx.config.n_values(&[1]);
    let mut reports = Vec::new();
    for &n in &ns {
        ctx.log(&format!("stability scan on supercell n = {n}"));
        let report = if n == 1 {
            verify_minimizer(&sol, &ctx.config.xi_grid, &ctx.config.stability)?
        } else {
            let sc = crystal.supercell(supercell_factors(&crystal, n))?;
            let state = sol.state.extend_to(&sc.grid)?;
            let hf = ScalarField::constant(&sc.grid, h);
            stability_scan(&state, &hf, &ctx.config.xi_grid, &ctx.config.stability)?
        };
        ctx.write_text(&format!("stability_n{n}.csv"), &report.fiber_csv())?;
        reports.push(json!({
            "n": n,
            "M": report.m,
            "global_gap": report.global_gap,
            "classification": report.classification,
            "threshold": report.threshold,
        }));
    }
    let summary = json!({"command": "stability-scan", "h": h, "reports": reports});
    ctx.write_json("stability.json", &summary)?;
    Ok(summary)
}

/// `n` along resolved axes, 1 along flat ones.
fn supercell_factors(crystal: &tfdw_core::state::Crystal, n: usize) -> [usize; 3] {
    let r = crystal.grid.spec().resolution;
    [0, 1, 2].map(|a| if r[a] > 1 { n } else { 1 })
}

pub fn cb_table_cmd(ctx: &Context) -> Result<Value, CliError> {
    let eps = ctx.eps_config()?;
    let table = ctx.build_table(&eps)?;
    let dir = ctx.out.join("cb_table");
    table.save(&dir)?;
    let summary = json!({
        "command": "cb-table",
        "range": table.range(),
        "samples": table.samples.len(),
        "anchor_gap": table.anchor().gap,
        "output": rel(&dir, &ctx.out),
    });
    ctx.write_json("cb_table.json", &summary)?;
    Ok(summary)
}

pub fn two_scale_build_cmd(ctx: &Context) -> Result<Value, CliError> {
    let eps = ctx.eps_config()?;
    let table = ctx.build_table(&eps)?;
    let set = build_correctors(&table, &eps.macro_field, AnsatzOrder::Second, &eps.correctors)?;
    let mut csv = Csv::new(&["n", "eps", "ansatz_residual", "ansatz_residual_order1", "leading_residual"]);
    let rows = eps
        .n_values
        .par_iter()
        .map(|&n| -> Result<(usize, [f64; 3], tfdw_core::state::State), CliError> {
            let sc = macro_supercell(&table.crystal, &eps.macro_field, n)?;
            let h = eps.macro_field.sample(&sc.grid)?;
            let r = |order| -> Result<(f64, tfdw_core::state::State), CliError> {
                let u = assemble_u0(&table, &set, &eps.macro_field, &sc.grid, order)?;
                Ok((residual(&sc, &u, &h)?.norm(), u))
            };
            let (r2, u0) = r(AnsatzOrder::Second)?;
            let (r1, _) = r(AnsatzOrder::First)?;
            let r0 = residual(&sc, &cb_field(&table, &h)?, &h)?.norm();
            Ok((n, [r2, r1, r0], u0))
        })
        .collect::<Result<Vec<_>, _>>()?;
    for (n, r, u0) in &rows {
        csv.push(vec![n.to_string(), fmt_num(1.0 / *n as f64), fmt_num(r[0]), fmt_num(r[1]), fmt_num(r[2])]);
        let dir = ctx.out.join(format!("two_scale/n{n}"));
        write_field(&dir.join("nu_plus.tfw"), &u0.nu_plus, "nu_plus")?;
        write_field(&dir.join("nu_minus.tfw"), &u0.nu_minus, "nu_minus")?;
        write_field(&dir.join("v.tfw"), &u0.v, "v")?;
    }
    ctx.write_text("two_scale.csv", &csv.render())?;
    let summary = json!({
        "command": "two-scale-build",
        "directions": set.directions,
        "max_corrector_residual": set.max_solve_residual,
        "table_range": table.range(),
        "n_values": eps.n_values,
    });
    ctx.write_json("two_scale.json", &summary)?;
    Ok(summary)
}

pub fn newton_study_cmd(ctx: &Context) -> Result<Value, CliError> {
    let eps = ctx.eps_config()?;
    let table = ctx.build_table(&eps)?;
    let set = build_correctors(&table, &eps.macro_field, AnsatzOrder::Second, &eps.correctors)?;
    let runs = eps
        .n_values
        .par_iter()
        .map(|&n| run_supercell(&table, &set, &eps.macro_field, n, &eps.newton))
        .collect::<tfdw_core::Result<Vec<_>>>()?;
    let mut rows = Vec::new();
    for run in &runs {
        let n = run.row.n;
        ctx.write_text(&format!("newton_n{n}.csv"), &run.trace.csv().render())?;
        rows.push(json!({
            "n": n,
            "eps": run.row.eps,
            "converged": run.trace.converged,
            "iterations": run.row.newton_iterations,
            "contraction_max": run.row.contraction_max,
            "distance_to_u0": run.trace.distance_to_u0,
            "distance_to_cb": run.trace.distance_to_cb,
            "final_residual": run.trace.iterates.last(),
        }));
    }
    let summary = json!({"command": "newton-study", "runs": rows});
    ctx.write_json("newton_study.json", &summary)?;
    Ok(summary)
}

pub fn eps_study_cmd(ctx: &Context) -> Result<Value, CliError> {
    let eps = ctx.eps_config()?;
    ctx.log(&format!("eps study over n = {:?}", eps.n_values));
    let study = eps_study(&eps)?;
    ctx.write_text("eps_study.csv", &study.csv().render())?;
    let summary = json!({
        "command": "eps-study",
        "slopes": study.slopes,
        "table_range": study.table_range,
        "max_corrector_residual": study.max_corrector_residual,
        "rows": study.rows,
    });
    ctx.write_json("eps_slopes.json", &summary)?;
    Ok(summary)
}

pub fn legendre_check_cmd(ctx: &Context) -> Result<Value, CliError> {
    let eps = ctx.eps_config()?;
    let table = ctx.build_table(&eps)?;
    let lc = &ctx.config.legendre;
    let dual = build_dual_table(&table, lc.dual_points, &eps.cb)?;
    let h_values = match &lc.h_values {
        Some(v) => v.clone(),
        None => {
            let (lo, hi) = table.range();
            (1..=5).map(|i| lo + (hi - lo) * i as f64 / 6.0).collect()
        }
    };
    let rows = legendre_check(&table, &dual, &h_values)?;
    let mut csv = Csv::new(&["h", "E_CB", "dual_min", "m_star", "rel_error"]);
    for r in &rows {
        csv.push_nums(&[r.h, r.e_cb, r.dual_min, r.m_star, r.rel_error]);
    }
    ctx.write_text("legendre.csv", &csv.render())?;
    let max_rel = rows.iter().map(|r| r.rel_error).fold(0.0, f64::max);
    let summary = json!({
        "command": "legendre-check",
        "max_rel_error": max_rel,
        "dual_points": lc.dual_points,
        "rows": rows,
    });
    ctx.write_json("legendre.json", &summary)?;
    Ok(summary)
}
