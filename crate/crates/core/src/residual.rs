use std::f64::consts::PI;

use crate::error::{Result, TfdwError};
use crate::lattice_grid::{dot, inverse_neg_laplacian, ScalarField};
use crate::state::{Crystal, State, Triple};

/// Odd extension `|t|^p sgn(t) * |t| = |t|^p t` used for fractional powers.
#[inline]
pub(crate) fn odd_pow(t: f64, p: f64) -> f64 {
    t.abs().powf(p) * t
}

/// Pointwise local part of the amplitude equations (without potential):
/// `(5/3)|nu|^{4/3} nu - (4/3)|nu|^{2/3} nu`.
#[inline]
pub(crate) fn local_term(nu: f64) -> f64 {
    5.0 / 3.0 * odd_pow(nu, 4.0 / 3.0) - 4.0 / 3.0 * odd_pow(nu, 2.0 / 3.0)
}

/// Euler-Lagrange residual of the supercell system.
#[derive(Clone, Debug)]
pub struct Residual {
    pub r_plus: ScalarField,
    pub r_minus: ScalarField,
    /// `-Laplacian V - 4 pi ((rho - rho_b) - mean)`.
    pub r_poisson: ScalarField,
    /// `n^{-3} integral rho - Z`.
    pub constraint_defect: f64,
}

impl Residual {
    /// The map whose Jacobian is the linearized operator:
    /// `(r_+, r_-, (1/8pi) Laplacian V + (rho - rho_b)/2)`.
    pub fn newton_map(&self) -> Triple {
        let cell = self.r_plus.grid().cell_volume();
        let half_mean = 0.5 * self.constraint_defect / cell;
        Triple {
            plus: self.r_plus.clone(),
            minus: self.r_minus.clone(),
            v: self.r_poisson.map(|x| -x / (8.0 * PI) + half_mean),
        }
    }

    /// Averaged `(L^2_n)^3` norm of [`Residual::newton_map`].
    pub fn norm(&self) -> f64 {
        self.newton_map().l2_norm()
    }
}

/// Non-gauge part `A_pm` of the amplitude residuals for a given potential.
fn amplitude_terms(
    nu: &ScalarField,
    v: &[f64],
    h: &[f64],
    spin: f64,
) -> Vec<f64> {
    let grid = nu.grid();
    let mut out = grid.neg_laplacian(nu.values());
    for (i, o) in out.iter_mut().enumerate() {
        let x = nu.values()[i];
        *o += local_term(x) + (v[i] - spin * h[i]) * x;
    }
    out
}

pub fn residual(crystal: &Crystal, state: &State, h: &ScalarField) -> Result<Residual> {
    crystal.grid.ensure_same(state.grid())?;
    state.nu_plus.ensure_same_grid(h)?;
    let vt: Vec<f64> = state.v.values().iter().map(|x| x + state.gauge).collect();
    let r_plus = state.nu_plus.with_values(amplitude_terms(&state.nu_plus, &vt, h.values(), 1.0));
    let r_minus = state.nu_plus.with_values(amplitude_terms(&state.nu_minus, &vt, h.values(), -1.0));
    let diff = state.rho().checked_sub(&crystal.rho_b)?;
    let mean = diff.mean();
    let grid = state.grid();
    let lap = grid.neg_laplacian(state.v.values());
    let r_poisson = state.v.with_values(
        lap.iter()
            .zip(diff.values())
            .map(|(l, d)| l - 4.0 * PI * (d - mean))
            .collect(),
    );
    Ok(Residual {
        r_plus,
        r_minus,
        r_poisson,
        constraint_defect: crystal.cell_volume() * mean,
    })
}

/// Newton map for a constant field.
pub fn newton_map_constant_h(crystal: &Crystal, state: &State, h: f64) -> Result<Triple> {
    Ok(residual(crystal, state, &ScalarField::constant(state.grid(), h))?.newton_map())
}

/// Least-squares gauge: the additive potential constant minimizing
/// `||r_+||^2 + ||r_-||^2`.
pub fn gauge_fit(crystal: &Crystal, state: &State, h: &ScalarField) -> Result<f64> {
    let denom = dot(state.nu_plus.values(), state.nu_plus.values())
        + dot(state.nu_minus.values(), state.nu_minus.values());
    if !(denom > 0.0) {
        return Err(TfdwError::Degenerate(
            "gauge fit needs a non-zero amplitude".into(),
        ));
    }
    let zero_gauge = State {
        gauge: 0.0,
        ..state.clone()
    };
    let r = residual(crystal, &zero_gauge, h)?;
    let num = dot(r.r_plus.values(), state.nu_plus.values())
        + dot(r.r_minus.values(), state.nu_minus.values());
    Ok(-num / denom)
}

/// Mean-zero Coulomb potential `4 pi (-Laplacian)^{-1} (rho - rho_b)`.
pub fn coulomb_potential(crystal: &Crystal, rho: &ScalarField) -> Result<ScalarField> {
    let diff = rho.checked_sub(&crystal.rho_b)?;
    Ok(inverse_neg_laplacian(&diff).scale(4.0 * PI))
}

/// Half the `L^2` gradient of the energy in the amplitudes, with the
/// potential eliminated through the Poisson equation and zero gauge.
pub fn amplitude_gradient(crystal: &Crystal, nu_plus: &ScalarField, nu_minus: &ScalarField, h: &ScalarField) -> Result<(ScalarField, ScalarField)> {
    let rho = nu_plus.zip_map(nu_minus, |a, b| a * a + b * b)?;
    let v = coulomb_potential(crystal, &rho)?;
    let gp = amplitude_terms(nu_plus, v.values(), h.values(), 1.0);
    let gm = amplitude_terms(nu_minus, v.values(), h.values(), -1.0);
    Ok((nu_plus.with_values(gp), nu_plus.with_values(gm)))
}

/// State with the potential eliminated and the least-squares gauge.
pub fn eliminate_potential(crystal: &Crystal, nu_plus: ScalarField, nu_minus: ScalarField, h: &ScalarField) -> Result<State> {
    let rho = nu_plus.zip_map(&nu_minus, |a, b| a * a + b * b)?;
    let v = coulomb_potential(crystal, &rho)?;
    let mut s = State::new(nu_plus, nu_minus, v, 0.0)?;
    s.gauge = gauge_fit(crystal, &s, h)?;
    Ok(s)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lattice_grid::{GridSpec, LatticeSpec};

    fn jellium_gauge(nu0: f64) -> f64 {
        -5.0 / 3.0 * nu0.powf(4.0 / 3.0) + 4.0 / 3.0 * nu0.powf(2.0 / 3.0)
    }

    #[test]
    fn jellium_is_exact() {
        let nu0 = 0.7;
        let c = Crystal::new(LatticeSpec::jellium(nu0).unwrap(), GridSpec::cell([4, 4, 4])).unwrap();
        let s = State::uniform(&c.grid, nu0, nu0, jellium_gauge(nu0));
        let r = residual(&c, &s, &ScalarField::zeros(&c.grid)).unwrap();
        assert!(r.norm() < 1e-14);
        assert!(r.constraint_defect.abs() < 1e-14);
    }

    #[test]
    fn gauge_fit_recovers_jellium_multiplier() {
        let nu0 = 0.45;
        let c = Crystal::new(LatticeSpec::jellium(nu0).unwrap(), GridSpec::cell([4, 4, 4])).unwrap();
        let s = State::uniform(&c.grid, nu0, nu0, 0.0);
        let g = gauge_fit(&c, &s, &ScalarField::zeros(&c.grid)).unwrap();
        assert!((g - jellium_gauge(nu0)).abs() < 1e-13);
        let zero = State::uniform(&c.grid, 0.0, 0.0, 0.0);
        assert_eq!(gauge_fit(&c, &zero, &ScalarField::zeros(&c.grid)).unwrap_err().kind(), "degenerate_state");
    }

    #[test]
    fn odd_extension_matches_powers_for_positive() {
        for t in [0.1f64, 0.7, 2.3] {
            assert!((odd_pow(t, 4.0 / 3.0) - t.powf(7.0 / 3.0)).abs() < 1e-14 * t.powf(7.0 / 3.0));
            assert_eq!(odd_pow(-t, 4.0 / 3.0), -odd_pow(t, 4.0 / 3.0));
        }
    }
}
