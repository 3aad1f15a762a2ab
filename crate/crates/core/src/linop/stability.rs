use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::fiber::{xi_cartesian, GapOptions};
use super::LinearizedOperator;
use crate::eigen::CVec;
use crate::error::Result;
use crate::lattice_grid::{Grid, ScalarField};
use crate::output::{fmt_num, Csv};
use crate::state::State;

/// Quasi-momentum sampling of the Brillouin zone.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum XiGrid {
    /// Only `xi = 0`.
    Gamma,
    /// Uniform `density` points per resolved axis, plus `xi = 0`.
    MonkhorstPack { density: usize },
    /// Explicit Cartesian points.
    Explicit { points: Vec<[f64; 3]> },
}

impl Default for XiGrid {
    fn default() -> Self {
        XiGrid::MonkhorstPack { density: 8 }
    }
}

impl XiGrid {
    pub fn points(&self, grid: &Grid) -> Vec<[f64; 3]> {
        match self {
            XiGrid::Gamma => vec![[0.0; 3]],
            XiGrid::MonkhorstPack { density } => monkhorst_pack(grid, *density),
            XiGrid::Explicit { points } => points.clone(),
        }
    }
}

/// `xi = 0` followed by a Monkhorst-Pack grid over the zone of the grid's
/// periodicity lattice. Axes without resolution are not sampled.
pub fn monkhorst_pack(grid: &Grid, density: usize) -> Vec<[f64; 3]> {
    let dims = grid.dims();
    let axis_points = |a: usize| -> Vec<f64> {
        if dims[a] == 1 || density == 0 {
            return vec![0.0];
        }
        let k = density as f64;
        (1..=density).map(|r| (2.0 * r as f64 - k - 1.0) / (2.0 * k)).collect()
    };
    let mut out = vec![[0.0; 3]];
    for s0 in axis_points(0) {
        for s1 in axis_points(1) {
            for s2 in axis_points(2) {
                let s = [s0, s1, s2];
                if s == [0.0; 3] {
                    continue;
                }
                out.push(xi_cartesian(grid, s));
            }
        }
    }
    out
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WaveClass {
    Sdw,
    Cdw,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StabilityClass {
    Stable,
    SdwUnstable,
    CdwUnstable,
    Both,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StabilityOptions {
    /// Gaps below this value count as instability.
    pub threshold: f64,
    /// Eigenvectors whose `(1,-1,0)` projection exceeds this fraction of
    /// their norm are spin-density-wave type.
    pub sdw_cutoff: f64,
    pub gap: GapOptions,
}

impl Default for StabilityOptions {
    fn default() -> Self {
        Self {
            threshold: 1e-6,
            sdw_cutoff: 0.9,
            gap: GapOptions::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FiberGap {
    pub xi: [f64; 3],
    pub gap: f64,
    pub eigenvalue: f64,
    /// Character of the eigenvector attaining the gap.
    pub gap_class: WaveClass,
    /// Negative eigenvalues, when the full spectrum was computed.
    pub negative_count: Option<usize>,
    /// Instability detected on this fiber, if any.
    pub unstable: Option<StabilityClass>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StabilityReport {
    pub fiber_gaps: Vec<FiberGap>,
    pub global_gap: f64,
    #[serde(rename = "M")]
    pub m: f64,
    pub classification: StabilityClass,
    pub threshold: f64,
}

impl StabilityReport {
    pub fn is_stable(&self) -> bool {
        self.classification == StabilityClass::Stable
    }

    pub fn fiber_csv(&self) -> String {
        let mut csv = Csv::new(&["xi1", "xi2", "xi3", "gap", "class"]);
        for f in &self.fiber_gaps {
            let class = match f.unstable {
                None | Some(StabilityClass::Stable) => "stable",
                Some(StabilityClass::SdwUnstable) => "sdw",
                Some(StabilityClass::CdwUnstable) => "cdw",
                Some(StabilityClass::Both) => "both",
            };
            csv.push(vec![
                fmt_num(f.xi[0]),
                fmt_num(f.xi[1]),
                fmt_num(f.xi[2]),
                fmt_num(f.gap),
                class.to_string(),
            ]);
        }
        csv.render()
    }
}

/// `(||omega_+ - omega_-|| / sqrt 2) / ||v||` and the amplitude weight.
fn channel_character(v: &[num_complex::Complex64]) -> (f64, f64) {
    let n = v.len() / 3;
    let mut diff = 0.0;
    let mut amp = 0.0;
    let mut total = 0.0;
    for i in 0..n {
        diff += (v[i] - v[n + i]).norm_sqr() / 2.0;
        amp += v[i].norm_sqr() + v[n + i].norm_sqr();
    }
    for z in v {
        total += z.norm_sqr();
    }
    if total == 0.0 {
        return (0.0, 0.0);
    }
    ((diff / total).sqrt(), amp / total)
}

fn classify(v: &[num_complex::Complex64], cutoff: f64) -> WaveClass {
    if channel_character(v).0 > cutoff {
        WaveClass::Sdw
    } else {
        WaveClass::Cdw
    }
}

fn merge(sdw: bool, cdw: bool) -> Option<StabilityClass> {
    match (sdw, cdw) {
        (false, false) => None,
        (true, false) => Some(StabilityClass::SdwUnstable),
        (false, true) => Some(StabilityClass::CdwUnstable),
        (true, true) => Some(StabilityClass::Both),
    }
}

fn scan_fiber(op: &LinearizedOperator, xi: [f64; 3], opts: &StabilityOptions) -> Result<FiberGap> {
    let fiber = op.fiber(xi)?;
    let n_w = op.grid().len();
    if fiber.dim() <= opts.gap.dense_limit {
        let (vals, vecs) = fiber.dense_eigen();
        let col = |j: usize| -> CVec { vecs.column(j).iter().copied().collect() };
        let (imin, _) = vals
            .iter()
            .enumerate()
            .min_by(|a, b| a.1.abs().total_cmp(&b.1.abs()))
            .expect("non-empty spectrum");
        let gap = vals[imin].abs();
        let gap_class = classify(&col(imin), opts.sdw_cutoff);
        let negatives: Vec<usize> = (0..vals.len()).filter(|&j| vals[j] < 0.0).collect();
        let mut sdw = false;
        let mut cdw = false;
        if negatives.len() > n_w {
            // extra negative directions beyond the potential modes: take the
            // ones carrying the most amplitude weight
            let mut by_amp: Vec<(f64, usize)> = negatives
                .iter()
                .map(|&j| (channel_character(&col(j)).1, j))
                .collect();
            by_amp.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
            for &(_, j) in by_amp.iter().take(negatives.len() - n_w) {
                match classify(&col(j), opts.sdw_cutoff) {
                    WaveClass::Sdw => sdw = true,
                    WaveClass::Cdw => cdw = true,
                }
            }
        } else if negatives.len() < n_w {
            cdw = true;
        }
        if gap < opts.threshold {
            match gap_class {
                WaveClass::Sdw => sdw = true,
                WaveClass::Cdw => cdw = true,
            }
        }
        let unstable = merge(sdw, cdw);
        return Ok(FiberGap {
            xi: fiber.xi(),
            gap,
            eigenvalue: vals[imin],
            gap_class,
            negative_count: Some(negatives.len()),
            unstable,
        });
    }
    let res = fiber.gap(&opts.gap)?;
    let gap_class = classify(&res.vector, opts.sdw_cutoff);
    Ok(FiberGap {
        xi: fiber.xi(),
        gap: res.gap,
        eigenvalue: res.eigenvalue,
        gap_class,
        negative_count: None,
        unstable: merge(
            res.gap < opts.threshold && gap_class == WaveClass::Sdw,
            res.gap < opts.threshold && gap_class == WaveClass::Cdw,
        ),
    })
}

/// Gaps of `ℒ_xi` over a quasi-momentum sample at a periodic state.
pub fn stability_scan(state: &State, h: &ScalarField, xi_grid: &XiGrid, opts: &StabilityOptions) -> Result<StabilityReport> {
    let op = LinearizedOperator::new(state, h)?;
    let points = xi_grid.points(op.grid());
    let fiber_gaps = points
        .par_iter()
        .map(|&xi| scan_fiber(&op, xi, opts))
        .collect::<Result<Vec<_>>>()?;
    let global_gap = fiber_gaps.iter().map(|f| f.gap).fold(f64::INFINITY, f64::min);
    let has = |c: StabilityClass| {
        fiber_gaps
            .iter()
            .any(|f| f.unstable == Some(c) || f.unstable == Some(StabilityClass::Both))
    };
    let classification = merge(has(StabilityClass::SdwUnstable), has(StabilityClass::CdwUnstable))
        .unwrap_or(StabilityClass::Stable);
    Ok(StabilityReport {
        fiber_gaps,
        global_gap,
        m: 1.0 / global_gap,
        classification,
        threshold: opts.threshold,
    })
}
