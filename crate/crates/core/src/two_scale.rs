//! Second-order two-scale approximation `u0` on a supercell for a slowly
//! varying field `h(eps x)`.
//!
//! With `u_CB(z; h)` from the Cauchy-Born table, `u' = du/dh`, `u'' = d2u/dh2`
//! and `S_d[w] = (2 d_d w_+, 2 d_d w_-, -(1/4pi) d_d w_V)`, the correctors are
//!
//! ```text
//! L Phi_d   = S_d[u']
//! L Phi'_d  = S_d[u''] - D2F[u', Phi_d] + (Phi_d+, -Phi_d-, 0)
//! L Psi^A_de = sym(2 d_e Phi_d + delta_de u')          (V row scaled by -1/8pi)
//! L Psi^B_de = sym(2 d_e Phi'_d + delta_de u'') - D2F[Phi_d, Phi_e] / 2
//! ```
//!
//! and `u0 = u_CB(h) + eps sum_d h_d Phi_d + eps^2 sum_de (h_de Psi^A_de +
//! h_d h_e Psi^B_de)` with macro derivatives `h_d`, `h_de` at `eps x`.

use std::f64::consts::PI;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cauchy_born::CbTable;
use crate::error::{Result, TfdwError};
use crate::krylov::MinresOptions;
use crate::lattice_grid::{Grid, ScalarField};
use crate::linop::LinearizedOperator;
use crate::state::{Crystal, State, Triple};

/// One Fourier component of the macro field, phase `2 pi m . s` in macro
/// fractional coordinates `s`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MacroMode {
    pub m: [i32; 3],
    #[serde(default)]
    pub cos: f64,
    #[serde(default)]
    pub sin: f64,
}

/// `h(X) = offset + sum cos_k cos(G_k . X) + sin_k sin(G_k . X)`, periodic
/// over one unit cell in the macro variable `X = eps x`.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MacroField {
    #[serde(default)]
    pub offset: f64,
    #[serde(default)]
    pub modes: Vec<MacroMode>,
}

impl MacroField {
    pub fn constant(value: f64) -> Self {
        Self {
            offset: value,
            modes: Vec::new(),
        }
    }

    /// `amplitude cos(2 pi s_axis)`.
    pub fn cosine(amplitude: f64, axis: usize) -> Self {
        let mut m = [0; 3];
        m[axis] = 1;
        Self {
            offset: 0.0,
            modes: vec![MacroMode { m, cos: amplitude, sin: 0.0 }],
        }
    }

    pub fn is_constant(&self) -> bool {
        self.modes.iter().all(|k| k.cos == 0.0 && k.sin == 0.0)
    }

    /// Upper bound on `|h|`.
    pub fn sup_bound(&self) -> f64 {
        self.offset.abs() + self.modes.iter().map(|k| k.cos.hypot(k.sin)).sum::<f64>()
    }

    /// Cartesian directions along which the field can vary.
    pub fn directions(&self, reciprocal: &[[f64; 3]; 3]) -> Vec<usize> {
        (0..3)
            .filter(|&d| {
                self.modes
                    .iter()
                    .any(|k| (k.cos != 0.0 || k.sin != 0.0) && wave_vector(reciprocal, k.m)[d].abs() > 1e-14)
            })
            .collect()
    }

    /// Value, Cartesian gradient and Hessian in `X`.
    pub fn eval(&self, reciprocal: &[[f64; 3]; 3], s: [f64; 3]) -> (f64, [f64; 3], [[f64; 3]; 3]) {
        let mut v = self.offset;
        let mut g = [0.0; 3];
        let mut hess = [[0.0; 3]; 3];
        for k in &self.modes {
            let theta = 2.0 * PI * (0..3).map(|a| k.m[a] as f64 * s[a]).sum::<f64>();
            let (sn, cs) = theta.sin_cos();
            let q = wave_vector(reciprocal, k.m);
            let val = k.cos * cs + k.sin * sn;
            let slope = -k.cos * sn + k.sin * cs;
            v += val;
            for d in 0..3 {
                g[d] += slope * q[d];
                for e in 0..3 {
                    hess[d][e] -= val * q[d] * q[e];
                }
            }
        }
        (v, g, hess)
    }

    /// Scale factor `n` of a supercell compatible with this field.
    pub fn check_supercell(&self, grid: &Grid) -> Result<usize> {
        let sc = grid.spec().supercell;
        let n = *sc.iter().max().unwrap();
        if sc.iter().any(|&f| f != 1 && f != n) {
            return Err(TfdwError::Structural(format!(
                "supercell {sc:?} mixes scale factors; eps = 1/n needs factors 1 or n"
            )));
        }
        for k in &self.modes {
            for a in 0..3 {
                if n > 1 && sc[a] == 1 && k.m[a] != 0 {
                    return Err(TfdwError::Structural(format!(
                        "macro mode {:?} varies along axis {a}, which is not scaled by the supercell",
                        k.m
                    )));
                }
            }
        }
        Ok(n)
    }

    /// Macro fractional coordinate of a supercell point.
    fn macro_coords(grid: &Grid, idx: usize) -> [f64; 3] {
        grid.fractional(idx)
    }

    /// `h(eps x)` sampled on a supercell grid.
    pub fn sample(&self, grid: &std::sync::Arc<Grid>) -> Result<ScalarField> {
        self.check_supercell(grid)?;
        let r = grid.reciprocal();
        let vals = (0..grid.len()).map(|i| self.eval(&r, Self::macro_coords(grid, i)).0).collect();
        ScalarField::new(grid.clone(), vals)
    }
}

fn wave_vector(reciprocal: &[[f64; 3]; 3], m: [i32; 3]) -> [f64; 3] {
    let mut q = [0.0; 3];
    for a in 0..3 {
        for d in 0..3 {
            q[d] += m[a] as f64 * reciprocal[a][d];
        }
    }
    q
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AnsatzOrder {
    Leading,
    First,
    Second,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CorrectorOptions {
    pub rtol: f64,
    pub max_iter: usize,
}

impl Default for CorrectorOptions {
    fn default() -> Self {
        Self {
            rtol: 1e-12,
            max_iter: 5000,
        }
    }
}

/// Per-sample corrector fields as flat `[+ | - | V]` vectors.
#[derive(Clone, Debug)]
pub struct CorrectorSet {
    pub order: AnsatzOrder,
    pub directions: Vec<usize>,
    /// `h` values of the samples (the table knots).
    pub macro_samples: Vec<f64>,
    /// `Phi_d` per direction, per sample.
    pub first_order: Vec<Vec<Vec<f64>>>,
    /// `Psi^A_de` per direction pair `d <= e`, per sample.
    pub second_order_a: Vec<Vec<Vec<f64>>>,
    /// `Psi^B_de` per direction pair `d <= e`, per sample.
    pub second_order_b: Vec<Vec<Vec<f64>>>,
    /// Largest absolute residual `||L x - b||` over all corrector solves.
    pub max_solve_residual: f64,
}

impl CorrectorSet {
    pub fn pairs(&self) -> Vec<(usize, usize)> {
        pairs(&self.directions)
    }
}

fn pairs(dirs: &[usize]) -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    for (i, &d) in dirs.iter().enumerate() {
        for &e in &dirs[i..] {
            out.push((d, e));
        }
    }
    out
}

/// `S_d[w]`.
pub fn micro_source(w: &Triple, d: usize) -> Result<Triple> {
    let g = w.grid();
    let p = |f: &ScalarField, c: f64| f.with_values(g.partial(f.values(), d).into_iter().map(|x| c * x).collect());
    Triple::new(p(&w.plus, 2.0), p(&w.minus, 2.0), p(&w.v, -1.0 / (4.0 * PI)))
}

/// `(w_+, -w_-, 0)`.
fn spin_split(w: &Triple) -> Triple {
    Triple {
        plus: w.plus.clone(),
        minus: w.minus.scale(-1.0),
        v: ScalarField::zeros(w.grid()),
    }
}

/// `2 d_e w + delta u` with the potential row scaled by `-1/8pi`.
fn mixed_term(w: &Triple, e: usize, diag: Option<&Triple>) -> Result<Triple> {
    let g = w.grid();
    let d = |f: &ScalarField| f.with_values(g.partial(f.values(), e));
    let mut t = Triple::new(d(&w.plus).scale(2.0), d(&w.minus).scale(2.0), d(&w.v).scale(2.0))?;
    if let Some(u) = diag {
        t = t.add(u)?;
    }
    t.v = t.v.scale(-1.0 / (8.0 * PI));
    Ok(t)
}

struct Solver<'a> {
    op: LinearizedOperator,
    opts: &'a CorrectorOptions,
    worst: f64,
}

impl Solver<'_> {
    fn solve(&mut self, rhs: &Triple) -> Result<Triple> {
        let x = self.op.solve(
            rhs,
            &MinresOptions {
                rtol: self.opts.rtol,
                max_iter: self.opts.max_iter,
                ..Default::default()
            },
        )?;
        let r = self.op.apply(&x)?.sub(rhs)?.l2_norm();
        self.worst = self.worst.max(r);
        Ok(x)
    }
}

struct SampleCorrectors {
    first: Vec<Vec<f64>>,
    second_a: Vec<Vec<f64>>,
    second_b: Vec<Vec<f64>>,
    worst: f64,
}

fn sample_correctors(state: &State, h: f64, dudh: &Triple, dirs: &[usize], order: AnsatzOrder, opts: &CorrectorOptions) -> Result<SampleCorrectors> {
    let op = LinearizedOperator::constant_h(state, h)?;
    let mut s = Solver { op, opts, worst: 0.0 };
    let mut out = SampleCorrectors {
        first: Vec::new(),
        second_a: Vec::new(),
        second_b: Vec::new(),
        worst: 0.0,
    };
    if order == AnsatzOrder::Leading || dirs.is_empty() {
        return Ok(out);
    }
    let mut phi = std::collections::BTreeMap::new();
    for &d in dirs {
        phi.insert(d, s.solve(&micro_source(dudh, d)?)?);
    }
    out.first = dirs.iter().map(|d| phi[d].to_flat()).collect();
    if order == AnsatzOrder::Second {
        let d2 = s.op.second_derivative(dudh, dudh)?;
        let u2 = s.solve(&spin_split(dudh).scale(2.0).sub(&d2)?)?;
        let mut dphi = std::collections::BTreeMap::new();
        for &d in dirs {
            let rhs = micro_source(&u2, d)?
                .sub(&s.op.second_derivative(dudh, &phi[&d])?)?
                .add(&spin_split(&phi[&d]))?;
            dphi.insert(d, s.solve(&rhs)?);
        }
        for (d, e) in pairs(dirs) {
            let delta = |u: &Triple| if d == e { Some(u.clone()) } else { None };
            let a = mixed_term(&phi[&d], e, delta(dudh).as_ref())?
                .add(&mixed_term(&phi[&e], d, delta(dudh).as_ref())?)?
                .scale(0.5);
            out.second_a.push(s.solve(&a)?.to_flat());
            let b = mixed_term(&dphi[&d], e, delta(&u2).as_ref())?
                .add(&mixed_term(&dphi[&e], d, delta(&u2).as_ref())?)?
                .scale(0.5)
                .sub(&s.op.second_derivative(&phi[&d], &phi[&e])?.scale(0.5))?;
            out.second_b.push(s.solve(&b)?.to_flat());
        }
    }
    out.worst = s.worst;
    Ok(out)
}

/// Solve the corrector systems at every table sample.
pub fn build_correctors(table: &CbTable, macro_field: &MacroField, order: AnsatzOrder, opts: &CorrectorOptions) -> Result<CorrectorSet> {
    let dirs = macro_field.directions(&table.crystal.reciprocal());
    for s in &table.samples {
        if order == AnsatzOrder::Second && !dirs.is_empty() && !s.solution.c_nu_ok {
            return Err(TfdwError::PositivityLoss {
                min_nu: s.solution.min_nu,
                floor: s.solution.c_nu,
            });
        }
    }
    let per: Vec<SampleCorrectors> = table
        .samples
        .par_iter()
        .map(|s| sample_correctors(&s.solution.state, s.solution.h_value, &s.dudh, &dirs, order, opts))
        .collect::<Result<_>>()?;
    let np = pairs(&dirs).len();
    let gather = |pick: &dyn Fn(&SampleCorrectors) -> &Vec<Vec<f64>>, count: usize| -> Vec<Vec<Vec<f64>>> {
        (0..count)
            .map(|k| per.iter().map(|p| pick(p).get(k).cloned().unwrap_or_default()).collect())
            .collect()
    };
    let nfirst = if order == AnsatzOrder::Leading { 0 } else { dirs.len() };
    let nsecond = if order == AnsatzOrder::Second { np } else { 0 };
    Ok(CorrectorSet {
        order,
        macro_samples: table.h_samples(),
        first_order: gather(&|p| &p.first, nfirst),
        second_order_a: gather(&|p| &p.second_a, nsecond),
        second_order_b: gather(&|p| &p.second_b, nsecond),
        max_solve_residual: per.iter().map(|p| p.worst).fold(0.0, f64::max),
        directions: dirs,
    })
}

/// Leading-order term: the Cauchy-Born field.
pub fn leading_order(table: &CbTable, macro_field: &MacroField, grid: &std::sync::Arc<Grid>) -> Result<State> {
    crate::cauchy_born::cb_field(table, &macro_field.sample(grid)?)
}

/// Evaluate `u0` at the requested order on a supercell grid.
pub fn assemble_u0(table: &CbTable, set: &CorrectorSet, macro_field: &MacroField, grid: &std::sync::Arc<Grid>, order: AnsatzOrder) -> Result<State> {
    let n = macro_field.check_supercell(grid)?;
    let cell = &table.crystal.grid;
    if grid.spec().resolution != cell.spec().resolution {
        return Err(TfdwError::Structural("supercell resolution differs from the table grid".into()));
    }
    let rank = |o: AnsatzOrder| match o {
        AnsatzOrder::Leading => 0,
        AnsatzOrder::First => 1,
        AnsatzOrder::Second => 2,
    };
    if rank(order) > rank(set.order) {
        return Err(TfdwError::Invalid(format!("correctors built for {:?}, requested {:?}", set.order, order)));
    }
    let eps = 1.0 / n as f64;
    let recip = cell.reciprocal();
    let spline = table.spline();
    let base: Vec<Vec<f64>> = table.samples.iter().map(|s| s.solution.state.to_flat()).collect();
    let pair_list = set.pairs();
    let nc = cell.len();
    let len = grid.len();
    let vals: Vec<[f64; 3]> = (0..len)
        .into_par_iter()
        .map(|i| {
            let (h, g, hess) = macro_field.eval(&recip, grid.fractional(i));
            let w = spline.weights(h)?;
            let z = cell.flat_index(grid.cell_point(i));
            let mut acc = [0.0; 3];
            let mut add = |fields: &[Vec<f64>], coef: f64| {
                if coef == 0.0 {
                    return;
                }
                for (f, &wj) in fields.iter().zip(&w) {
                    if wj == 0.0 {
                        continue;
                    }
                    for (c, a) in acc.iter_mut().enumerate() {
                        *a += coef * wj * f[c * nc + z];
                    }
                }
            };
            add(&base, 1.0);
            if rank(order) >= 1 {
                for (k, &d) in set.directions.iter().enumerate() {
                    add(&set.first_order[k], eps * g[d]);
                }
            }
            if rank(order) >= 2 {
                for (k, &(d, e)) in pair_list.iter().enumerate() {
                    let mult = if d == e { 1.0 } else { 2.0 };
                    add(&set.second_order_a[k], eps * eps * mult * hess[d][e]);
                    add(&set.second_order_b[k], eps * eps * mult * g[d] * g[e]);
                }
            }
            Ok(acc)
        })
        .collect::<Result<_>>()?;
    let mut flat = vec![0.0; 3 * len];
    for (i, v) in vals.iter().enumerate() {
        for c in 0..3 {
            flat[c * len + i] = v[c];
        }
    }
    State::from_flat(grid, &flat)
}

/// Supercell crystal matching a macro field: `n` copies along every axis on
/// which the field varies.
pub fn macro_supercell(crystal: &Crystal, macro_field: &MacroField, n: usize) -> Result<Crystal> {
    let mut sc = [1; 3];
    for a in 0..3 {
        let varies = macro_field.modes.iter().any(|k| k.m[a] != 0);
        let resolved = crystal.grid.spec().resolution[a] > 1;
        if varies || (resolved && macro_field.modes.is_empty()) {
            sc[a] = n;
        }
    }
    crystal.supercell(sc)
}

/// Residual norm of the ansatz.
pub fn ansatz_residual(sc: &Crystal, u0: &State, macro_field: &MacroField) -> Result<f64> {
    let h = macro_field.sample(&sc.grid)?;
    Ok(crate::residual::residual(sc, u0, &h)?.norm())
}
