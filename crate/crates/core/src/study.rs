//! The eps-sweep: Cauchy-Born table, two-scale ansatz and frozen Newton on
//! supercells of increasing size, with fitted convergence slopes.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cauchy_born::{build_cb_table, cb_field, CbOptions, CbTable};
use crate::convergence::loglog_slope;
use crate::error::{Result, TfdwError};
use crate::lattice_grid::{GridSpec, LatticeSpec};
use crate::newton::{newton_solve, NewtonOptions, NewtonTrace};
use crate::output::Csv;
use crate::residual::residual;
use crate::state::{Crystal, State};
use crate::two_scale::{assemble_u0, build_correctors, macro_supercell, AnsatzOrder, CorrectorOptions, CorrectorSet, MacroField};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EpsStudyConfig {
    pub lattice: LatticeSpec,
    pub resolution: [usize; 3],
    pub macro_field: MacroField,
    pub n_values: Vec<usize>,
    pub table_step: f64,
    /// Table range beyond the extreme values of `h`.
    #[serde(default)]
    pub table_margin: Option<f64>,
    /// Explicit table range; overrides the margin.
    #[serde(default)]
    pub table_range: Option<[f64; 2]>,
    #[serde(default)]
    pub cb: CbOptions,
    #[serde(default)]
    pub correctors: CorrectorOptions,
    #[serde(default)]
    pub newton: NewtonOptions,
    #[serde(default = "default_true")]
    pub exclude_largest: bool,
}

fn default_true() -> bool {
    true
}

impl EpsStudyConfig {
    /// Quasi-1D default: period-4 chain, `h = h0 cos(2 pi s_1)`.
    pub fn quasi_1d(h0: f64, n_values: Vec<usize>) -> Result<Self> {
        Ok(Self {
            lattice: LatticeSpec::chain(4.0, 1.6, 0.9)?,
            resolution: [32, 1, 1],
            macro_field: MacroField::cosine(h0, 0),
            n_values,
            table_step: h0 / 8.0,
            table_margin: None,
            table_range: None,
            cb: CbOptions::default(),
            correctors: CorrectorOptions::default(),
            newton: NewtonOptions::default(),
            exclude_largest: true,
        })
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_values.is_empty() || self.n_values.contains(&0) {
            return Err(TfdwError::Invalid("n values must be positive integers".into()));
        }
        if !(self.table_step > 0.0) {
            return Err(TfdwError::Invalid("table step must be positive".into()));
        }
        if let Some(m) = self.table_margin {
            if !(m >= 0.0) {
                return Err(TfdwError::Invalid("table margin must be non-negative".into()));
            }
        }
        if let Some([lo, hi]) = self.table_range {
            let amp = self.macro_field.sup_bound() - self.macro_field.offset.abs();
            let (flo, fhi) = (self.macro_field.offset - amp, self.macro_field.offset + amp);
            if !(lo <= flo.min(0.0) && hi >= fhi.max(0.0)) {
                return Err(TfdwError::Invalid(format!(
                    "table range [{lo}, {hi}] does not cover 0 and the field range [{flo}, {fhi}]"
                )));
            }
        }
        Ok(())
    }

    pub fn crystal(&self) -> Result<Crystal> {
        Crystal::new(self.lattice.clone(), GridSpec::cell(self.resolution))
    }

    /// `[lo, hi]` containing 0 and the range of `h`.
    pub fn table_range(&self) -> (f64, f64) {
        if let Some([lo, hi]) = self.table_range {
            return (lo, hi);
        }
        let margin = self.table_margin.unwrap_or(self.table_step);
        let amp = self.macro_field.sup_bound() - self.macro_field.offset.abs();
        let lo = (self.macro_field.offset - amp).min(0.0) - margin;
        let hi = (self.macro_field.offset + amp).max(0.0) + margin;
        (lo, hi)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpsRow {
    pub n: usize,
    pub eps: f64,
    /// `||F(u0)||` with both corrector orders.
    pub ansatz_residual: f64,
    /// `||F(u0)||` without the second-order correctors.
    pub ansatz_residual_order1: f64,
    pub newton_distance_u0: f64,
    pub cb_distance: f64,
    pub contraction_max: f64,
    pub newton_iterations: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpsSlopes {
    pub ansatz_residual: Option<f64>,
    pub ansatz_residual_order1: Option<f64>,
    pub newton_distance_u0: Option<f64>,
    pub cb_distance: Option<f64>,
    pub excluded_largest_eps: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpsStudy {
    pub rows: Vec<EpsRow>,
    pub slopes: EpsSlopes,
    pub table_range: (f64, f64),
    pub max_corrector_residual: f64,
}

impl EpsStudy {
    pub fn csv(&self) -> Csv {
        let mut c = Csv::new(&[
            "n",
            "eps",
            "ansatz_residual",
            "newton_distance_u0",
            "cb_distance",
            "contraction_max",
            "ansatz_residual_order1",
            "newton_iterations",
        ]);
        for r in &self.rows {
            let f = crate::output::fmt_num;
            c.push(vec![
                r.n.to_string(),
                f(r.eps),
                f(r.ansatz_residual),
                f(r.newton_distance_u0),
                f(r.cb_distance),
                f(r.contraction_max),
                f(r.ansatz_residual_order1),
                r.newton_iterations.to_string(),
            ]);
        }
        c
    }
}

/// Everything computed for one supercell size.
#[derive(Clone, Debug)]
pub struct SupercellRun {
    pub row: EpsRow,
    pub supercell: Crystal,
    pub u0: State,
    pub u_cb: State,
    pub u_star: State,
    pub trace: NewtonTrace,
}

pub fn run_supercell(table: &CbTable, set: &CorrectorSet, macro_field: &MacroField, n: usize, newton: &NewtonOptions) -> Result<SupercellRun> {
    let sc = macro_supercell(&table.crystal, macro_field, n)?;
    let h = macro_field.sample(&sc.grid)?;
    let u_cb = cb_field(table, &h)?;
    let u0 = assemble_u0(table, set, macro_field, &sc.grid, AnsatzOrder::Second)?;
    let u1 = assemble_u0(table, set, macro_field, &sc.grid, AnsatzOrder::First)?;
    let ansatz_residual = residual(&sc, &u0, &h)?.norm();
    let ansatz_residual_order1 = residual(&sc, &u1, &h)?.norm();
    let (u_star, trace) = newton_solve(&sc, &u0, &h, Some(&u_cb), newton)?;
    if !trace.converged {
        return Err(TfdwError::NewtonFailure(format!(
            "frozen Newton did not converge for n = {n}; residuals {:?}",
            trace.iterates
        )));
    }
    let row = EpsRow {
        n,
        eps: 1.0 / n as f64,
        ansatz_residual,
        ansatz_residual_order1,
        newton_distance_u0: trace.distance_to_u0,
        cb_distance: trace.distance_to_cb.unwrap_or(0.0),
        contraction_max: trace.contraction_max(),
        newton_iterations: trace.steps(),
    };
    Ok(SupercellRun {
        row,
        supercell: sc,
        u0,
        u_cb,
        u_star,
        trace,
    })
}

fn slope(rows: &[EpsRow], pick: impl Fn(&EpsRow) -> f64, exclude: bool) -> Option<f64> {
    let eps: Vec<f64> = rows.iter().map(|r| r.eps).collect();
    let v: Vec<f64> = rows.iter().map(pick).collect();
    loglog_slope(&eps, &v, exclude).ok()
}

pub fn eps_study(cfg: &EpsStudyConfig) -> Result<EpsStudy> {
    cfg.validate()?;
    let crystal = cfg.crystal()?;
    let range = cfg.table_range();
    let table = build_cb_table(&crystal, range, cfg.table_step, &cfg.cb)?;
    let set = build_correctors(&table, &cfg.macro_field, AnsatzOrder::Second, &cfg.correctors)?;
    let mut ns = cfg.n_values.clone();
    ns.sort_unstable();
    ns.dedup();
    let rows: Vec<EpsRow> = ns
        .par_iter()
        .map(|&n| run_supercell(&table, &set, &cfg.macro_field, n, &cfg.newton).map(|r| r.row))
        .collect::<Result<_>>()?;
    let ex = cfg.exclude_largest;
    let slopes = EpsSlopes {
        ansatz_residual: slope(&rows, |r| r.ansatz_residual, ex),
        ansatz_residual_order1: slope(&rows, |r| r.ansatz_residual_order1, ex),
        newton_distance_u0: slope(&rows, |r| r.newton_distance_u0, ex),
        cb_distance: slope(&rows, |r| r.cb_distance, ex),
        excluded_largest_eps: ex,
    };
    Ok(EpsStudy {
        rows,
        slopes,
        table_range: table.range(),
        max_corrector_residual: set.max_solve_residual,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_field_study_degenerates() {
        let mut cfg = EpsStudyConfig::quasi_1d(0.02, vec![2, 3, 4]).unwrap();
        cfg.resolution = [16, 1, 1];
        cfg.macro_field = MacroField::constant(0.005);
        cfg.table_step = 0.005;
        let study = eps_study(&cfg).unwrap();
        assert_eq!(study.rows.len(), 3);
        for r in &study.rows {
            assert!(r.ansatz_residual <= 1e-9, "{r:?}");
            assert!(r.cb_distance <= 1e-9, "{r:?}");
            assert_eq!(r.ansatz_residual, r.ansatz_residual_order1);
        }
        let header = study.csv().render();
        assert!(header.starts_with("n,eps,ansatz_residual,newton_distance_u0,cb_distance,contraction_max"));
    }

    #[test]
    fn validation() {
        let mut cfg = EpsStudyConfig::quasi_1d(0.02, vec![4, 0]).unwrap();
        assert!(cfg.validate().is_err());
        cfg.n_values = vec![4];
        assert!(cfg.validate().is_ok());
        cfg.table_range = Some([-0.01, 0.03]);
        assert!(cfg.validate().is_err());
        cfg.table_range = Some([-0.03, 0.03]);
        assert_eq!(cfg.table_range(), (-0.03, 0.03));
        cfg.table_step = 0.0;
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn default_range_has_one_step_margin() {
        let cfg = EpsStudyConfig::quasi_1d(0.02, vec![4]).unwrap();
        let (lo, hi) = cfg.table_range();
        assert!((lo + 0.0225).abs() < 1e-15 && (hi - 0.0225).abs() < 1e-15);
    }
}
