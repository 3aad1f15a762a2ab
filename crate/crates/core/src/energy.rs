use serde::{Deserialize, Serialize};

use crate::error::{Result, TfdwError};
use crate::lattice_grid::{dot, hminus1_inner_unchecked, ScalarField};
use crate::state::{Crystal, State};

/// Energy split into its physical terms. Values are totals over the
/// supercell unless produced by [`EnergyBreakdown::per_volume`].
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnergyBreakdown {
    pub thomas_fermi: f64,
    pub weizsacker: f64,
    pub dirac: f64,
    pub coulomb: f64,
    pub zeeman: f64,
    pub total: f64,
}

impl EnergyBreakdown {
    fn from_terms(thomas_fermi: f64, weizsacker: f64, dirac: f64, coulomb: f64, zeeman: f64) -> Self {
        Self {
            thomas_fermi,
            weizsacker,
            dirac,
            coulomb,
            zeeman,
            total: thomas_fermi + weizsacker + dirac + coulomb + zeeman,
        }
    }

    /// Divide every term by a volume (barred integrals).
    pub fn per_volume(&self, volume: f64) -> Self {
        Self::from_terms(
            self.thomas_fermi / volume,
            self.weizsacker / volume,
            self.dirac / volume,
            self.coulomb / volume,
            self.zeeman / volume,
        )
    }

    /// Total without the Zeeman term.
    pub fn internal(&self) -> f64 {
        self.total - self.zeeman
    }
}

/// Relative tolerance on the charge imbalance for the Coulomb term.
pub(crate) const NEUTRALITY_TOL: f64 = 1e-10;

pub(crate) fn check_neutral(crystal: &Crystal, rho: &ScalarField) -> Result<ScalarField> {
    let diff = rho.checked_sub(&crystal.rho_b)?;
    let mean = diff.mean();
    let tol = NEUTRALITY_TOL * crystal.rho_b.mean().abs().max(f64::MIN_POSITIVE);
    if mean.abs() > tol {
        return Err(TfdwError::Solvability {
            mean,
            tolerance: tol,
        });
    }
    Ok(diff)
}

/// `-integral h (nu_+^2 - nu_-^2)` over the supercell.
pub fn zeeman_coupling(state: &State, h: &ScalarField) -> Result<f64> {
    state.nu_plus.ensure_same_grid(h)?;
    Ok(-h.grid().dv() * dot(h.values(), state.magnetization().values()))
}

/// Supercell functional with a spatially varying field `h`.
pub fn energy_supercell(crystal: &Crystal, state: &State, h: &ScalarField) -> Result<EnergyBreakdown> {
    let grid = state.grid();
    grid.ensure_same(&crystal.grid)?;
    state.nu_plus.ensure_same_grid(h)?;
    let dv = grid.dv();
    let rho = state.rho();
    let diff = check_neutral(crystal, &rho)?;

    let mut tf = 0.0;
    let mut dirac = 0.0;
    for f in [&state.nu_plus, &state.nu_minus] {
        for &v in f.values() {
            let a = v.abs();
            tf += a.powf(10.0 / 3.0);
            dirac -= a.powf(8.0 / 3.0);
        }
    }
    let mut w = 0.0;
    for f in [&state.nu_plus, &state.nu_minus] {
        w += dot(f.values(), &grid.neg_laplacian(f.values()));
    }
    let coulomb = 0.5 * hminus1_inner_unchecked(&diff, &diff);
    let zeeman = zeeman_coupling(state, h)?;
    Ok(EnergyBreakdown::from_terms(tf * dv, w.max(0.0) * dv, dirac * dv, coulomb, zeeman))
}

/// Unit-cell or supercell functional with a constant field.
pub fn energy_constant_h(crystal: &Crystal, state: &State, h: f64) -> Result<EnergyBreakdown> {
    energy_supercell(crystal, state, &ScalarField::constant(state.grid(), h))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lattice_grid::{GridSpec, LatticeSpec};

    #[test]
    fn jellium_constants() {
        let nu0: f64 = 0.6;
        let c = Crystal::new(LatticeSpec::jellium(nu0).unwrap(), GridSpec { resolution: [4, 4, 4], supercell: [2, 1, 1] }).unwrap();
        let s = State::uniform(&c.grid, nu0, nu0, 3.0);
        let e = energy_constant_h(&c, &s, 0.0).unwrap();
        let vol = 2.0;
        assert!(e.weizsacker.abs() < 1e-14);
        assert!(e.coulomb.abs() < 1e-14);
        assert!((e.thomas_fermi - 2.0 * nu0.powf(10.0 / 3.0) * vol).abs() < 1e-12);
        assert!((e.dirac + 2.0 * nu0.powf(8.0 / 3.0) * vol).abs() < 1e-12);
    }

    #[test]
    fn zeeman_cases() {
        let c = Crystal::new(LatticeSpec::jellium(0.5).unwrap(), GridSpec::cell([4, 4, 4])).unwrap();
        let s = State::uniform(&c.grid, 0.5, 0.5, 0.0);
        let h = ScalarField::constant(&c.grid, 0.3);
        assert_eq!(zeeman_coupling(&s, &h).unwrap(), 0.0);
        let p = State::uniform(&c.grid, 0.6, 0.4, 0.0);
        let m_tot = p.magnetization().integral();
        assert!((zeeman_coupling(&p, &h).unwrap() + 0.3 * m_tot).abs() < 1e-14);
    }

    #[test]
    fn imbalance_is_solvability_error() {
        let c = Crystal::new(LatticeSpec::jellium(0.5).unwrap(), GridSpec::cell([4, 4, 4])).unwrap();
        let s = State::uniform(&c.grid, 0.6, 0.5, 0.0);
        let err = energy_constant_h(&c, &s, 0.0).unwrap_err();
        assert_eq!(err.kind(), "solvability");
    }
}
