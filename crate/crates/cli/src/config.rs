//! Study configuration read from JSON. The layout is described by
//! `schema/study_config.schema.json`.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use tfdw_core::cauchy_born::CbOptions;
use tfdw_core::cell::CellOptions;
use tfdw_core::lattice_grid::{GridSpec, LatticeSpec};
use tfdw_core::linop::{StabilityOptions, XiGrid};
use tfdw_core::newton::NewtonOptions;
use tfdw_core::state::{Crystal, InitPreset};
use tfdw_core::study::EpsStudyConfig;
use tfdw_core::two_scale::{CorrectorOptions, MacroField};

use crate::error::CliError;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StudyConfig {
    #[serde(default)]
    pub lattice: Option<LatticeSpec>,
    /// Grid points per unit cell along each axis.
    #[serde(default)]
    pub resolution: Option<[usize; 3]>,
    /// Applied field: constant `offset` plus optional macro modes.
    #[serde(default)]
    pub h: MacroField,
    #[serde(default)]
    pub init: Option<InitPreset>,
    #[serde(default)]
    pub cell: CellOptions,
    #[serde(default)]
    pub stability: StabilityOptions,
    #[serde(default = "default_xi_grid")]
    pub xi_grid: XiGrid,
    /// Supercell sizes `n`, with `eps = 1/n`.
    #[serde(default)]
    pub n_values: Option<Vec<usize>>,
    #[serde(default)]
    pub table: TableConfig,
    #[serde(default)]
    pub correctors: CorrectorOptions,
    #[serde(default)]
    pub newton: NewtonOptions,
    /// Drop the largest `eps` from slope fits.
    #[serde(default = "default_true")]
    pub exclude_largest: bool,
    #[serde(default)]
    pub jellium: JelliumConfig,
    #[serde(default)]
    pub legendre: LegendreConfig,
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(default)]
    pub out: Option<PathBuf>,
}

fn default_true() -> bool {
    true
}

fn default_xi_grid() -> XiGrid {
    XiGrid::MonkhorstPack { density: 4 }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TableConfig {
    /// Spacing of the field samples; defaults to an eighth of `sup |h|`.
    pub step: Option<f64>,
    /// Explicit `[lo, hi]`; otherwise the range of `h` plus `margin`.
    pub range: Option<[f64; 2]>,
    pub margin: Option<f64>,
    pub anchor: Option<InitPreset>,
    pub check_stability: Option<bool>,
    pub derivative_rtol: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct JelliumConfig {
    pub nu0_min: f64,
    pub nu0_max: f64,
    pub nu0_count: usize,
    pub xi_values: Vec<f64>,
}

impl Default for JelliumConfig {
    fn default() -> Self {
        Self {
            nu0_min: 0.1,
            nu0_max: 1.0,
            nu0_count: 10,
            xi_values: vec![0.0, 0.5, 1.0, 2.0],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LegendreConfig {
    pub dual_points: usize,
    /// Fields to check; defaults to five interior points of the table.
    pub h_values: Option<Vec<f64>>,
}

impl Default for LegendreConfig {
    fn default() -> Self {
        Self {
            dual_points: 33,
            h_values: None,
        }
    }
}

fn positive(name: &str, v: f64) -> Result<(), CliError> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(CliError::Config(format!("{name} must be positive, got {v}")))
    }
}

impl StudyConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self, CliError> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| CliError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), CliError> {
        positive("cell.switch_tol", self.cell.switch_tol)?;
        positive("cell.newton.tol", self.cell.newton.tol)?;
        positive("cell.newton.inner_rtol", self.cell.newton.inner_rtol)?;
        positive("stability.threshold", self.stability.threshold)?;
        positive("stability.gap.tol", self.stability.gap.tol)?;
        positive("correctors.rtol", self.correctors.rtol)?;
        positive("newton.tol", self.newton.tol)?;
        positive("newton.inner_factor", self.newton.inner_factor)?;
        if let Some(c) = self.cell.c_nu {
            positive("cell.c_nu", c)?;
        }
        if let Some(t) = self.table.derivative_rtol {
            positive("table.derivative_rtol", t)?;
        }
        if let Some(s) = self.table.step {
            positive("table.step", s)?;
        }
        if let Some(m) = self.table.margin {
            if !(m >= 0.0) {
                return Err(CliError::Config(format!("table.margin must be non-negative, got {m}")));
            }
        }
        if let Some([lo, hi]) = self.table.range {
            if !(lo <= 0.0 && hi >= 0.0 && lo < hi) {
                return Err(CliError::Config(format!("table.range [{lo}, {hi}] must contain 0")));
            }
        }
        if let Some(ns) = &self.n_values {
            if ns.is_empty() || ns.contains(&0) {
                return Err(CliError::Config("n_values must be a non-empty list of positive integers".into()));
            }
        }
        let j = &self.jellium;
        positive("jellium.nu0_min", j.nu0_min)?;
        if !(j.nu0_max > j.nu0_min) || j.nu0_count < 2 {
            return Err(CliError::Config("jellium needs nu0_max > nu0_min and nu0_count >= 2".into()));
        }
        if self.legendre.dual_points < 4 {
            return Err(CliError::Config("legendre.dual_points must be at least 4".into()));
        }
        Ok(())
    }

    pub fn crystal(&self) -> Result<Crystal, CliError> {
        let lattice = self
            .lattice
            .clone()
            .ok_or_else(|| CliError::Config("missing field `lattice`".into()))?;
        let res = self
            .resolution
            .ok_or_else(|| CliError::Config("missing field `resolution`".into()))?;
        Crystal::new(lattice, GridSpec::cell(res)).map_err(|e| CliError::Config(e.to_string()))
    }

    /// Initialization preset with the seed override applied.
    pub fn init_preset(&self, seed: Option<u64>) -> InitPreset {
        match (self.init.clone().unwrap_or(InitPreset::Uniform), seed.or(self.seed)) {
            (InitPreset::UniformPlusNoise { amplitude, .. }, Some(s)) => InitPreset::UniformPlusNoise { seed: s, amplitude },
            (p, _) => p,
        }
    }

    pub fn n_values(&self, default: &[usize]) -> Vec<usize> {
        self.n_values.clone().unwrap_or_else(|| default.to_vec())
    }

    /// The constant field value, rejecting macro modes.
    pub fn constant_h(&self) -> Result<f64, CliError> {
        if !self.h.is_constant() {
            return Err(CliError::Config("this command needs a constant field (no `h.modes`)".into()));
        }
        Ok(self.h.offset)
    }

    pub fn table_step(&self) -> f64 {
        self.table.step.unwrap_or_else(|| {
            let s = self.h.sup_bound();
            if s > 0.0 {
                s / 8.0
            } else {
                0.0025
            }
        })
    }

    pub fn cb_options(&self, seed: Option<u64>) -> CbOptions {
        let base = CbOptions::default();
        CbOptions {
            cell: self.cell,
            anchor: self.table.anchor.clone().unwrap_or_else(|| self.init_preset(seed)),
            check_stability: self.table.check_stability.unwrap_or(base.check_stability),
            stability: self.stability,
            xi_grid: self.xi_grid.clone(),
            derivative_rtol: self.table.derivative_rtol.unwrap_or(base.derivative_rtol),
        }
    }

    pub fn eps_config(&self, seed: Option<u64>, default_ns: &[usize]) -> Result<EpsStudyConfig, CliError> {
        let cfg = EpsStudyConfig {
            lattice: self
                .lattice
                .clone()
                .ok_or_else(|| CliError::Config("missing field `lattice`".into()))?,
            resolution: self
                .resolution
                .ok_or_else(|| CliError::Config("missing field `resolution`".into()))?,
            macro_field: self.h.clone(),
            n_values: self.n_values(default_ns),
            table_step: self.table_step(),
            table_margin: self.table.margin,
            table_range: self.table.range,
            cb: self.cb_options(seed),
            correctors: self.correctors,
            newton: self.newton,
            exclude_largest: self.exclude_largest,
        };
        cfg.validate().map_err(|e| CliError::Config(e.to_string()))?;
        Ok(cfg)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"{
        "lattice": {"cell_vectors": [[4,0,0],[0,1,0],[0,0,1]], "z": 1.6,
                    "rho_b": {"kind": "modes", "modes": [{"g": [1,0,0], "re": 0.18}]}},
        "resolution": [32, 1, 1],
        "h": {"modes": [{"m": [1,0,0], "cos": 0.02}]}
    }"#;

    #[test]
    fn minimal_config_parses_with_defaults() {
        let c = StudyConfig::parse(MINIMAL).unwrap();
        assert!(c.exclude_largest);
        assert_eq!(c.table_step(), 0.0025);
        assert!(c.crystal().is_ok());
        assert!(c.constant_h().is_err());
    }

    #[test]
    fn unknown_fields_are_rejected() {
        let bad = MINIMAL.replacen("\"resolution\"", "\"resolutoin\"", 1);
        assert!(matches!(StudyConfig::parse(&bad), Err(CliError::Config(_))));
        let nested = MINIMAL.replacen("\"z\": 1.6", "\"z\": 1.6, \"charge\": 2", 1);
        assert!(matches!(StudyConfig::parse(&nested), Err(CliError::Config(_))));
    }

    #[test]
    fn non_positive_tolerance_is_a_config_error() {
        let bad = MINIMAL.replacen("\"resolution\"", "\"newton\": {\"tol\": 0.0}, \"resolution\"", 1);
        let err = StudyConfig::parse(&bad).unwrap_err();
        assert!(err.to_string().contains("newton.tol"));
        let zero_n = MINIMAL.replacen("\"resolution\"", "\"n_values\": [4, 0], \"resolution\"", 1);
        assert!(StudyConfig::parse(&zero_n).is_err());
    }

    #[test]
    fn seed_override_reaches_noise_preset() {
        let text = MINIMAL.replacen(
            "\"resolution\"",
            "\"init\": {\"preset\": \"uniform_plus_noise\", \"seed\": 1, \"amplitude\": 0.01}, \"seed\": 5, \"resolution\"",
            1,
        );
        let c = StudyConfig::parse(&text).unwrap();
        assert_eq!(c.init_preset(None), InitPreset::UniformPlusNoise { seed: 5, amplitude: 0.01 });
        assert_eq!(c.init_preset(Some(9)), InitPreset::UniformPlusNoise { seed: 9, amplitude: 0.01 });
    }
}
