//! Physical model of the network: `n_s` source voltages driving one
//! capacitive bus through RL lines.
//!
//! ```text
//!  u_1 ──[ R_1  L_1 ]──┐
//!  u_2 ──[ R_2  L_2 ]──┼──●── V_dc ──[ C_dc ]──┰── I_ell + Y·V_dc
//!  u_n ──[ R_n  L_n ]──┘                       ┷
//! ```
//!
//! Each line current obeys `L_i dI_i/dt = -V_dc - R_i I_i + u_i`, and the bus
//! obeys `C_dc dV_dc/dt = Σ I_i - I_ell - Y·V_dc`. The load is a constant
//! current `I_ell` plus an admittance `Y` (a "ZI" load); `Y > 0` is what makes
//! the bus voltage strictly damped, so `Y = 0` is allowed here but flagged by
//! the verification command.

use serde::{Deserialize, Serialize};

use crate::error::ModelError;

/// Physical parameters of the network.
///
/// Lengths of the per-line vectors must all equal `n_s`; `validate` checks
/// that along with the sign constraints and the inductance intervals.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlantParams {
    /// Number of sources (and lines).
    pub n_s: usize,
    /// Line inductances [H], each > 0.
    pub l_tau_h: Vec<f64>,
    /// Line resistances [Ω], each > 0.
    pub r_tau_ohm: Vec<f64>,
    /// Per-line inductance interval [H] known to the controller designer;
    /// the true `l_tau_h[i]` must lie strictly inside `(min, max)`.
    pub l_bounds_h: Vec<(f64, f64)>,
    /// Bus capacitance [F], > 0.
    pub c_dc_f: f64,
    /// Constant-current component of the load [A].
    pub i_ell_a: f64,
    /// Load admittance [S], ≥ 0.
    pub y_siemens: f64,
}

impl PlantParams {
    /// Three-line bench network used by the shipped configuration and the
    /// test suite: heterogeneous lines, a stiff small bus capacitance, and a
    /// mostly-constant-current load.
    pub fn builtin_three_line() -> Self {
        PlantParams {
            n_s: 3,
            l_tau_h: vec![900e-6, 550e-6, 350e-6],
            r_tau_ohm: vec![1.33, 0.78, 0.71],
            l_bounds_h: vec![(100e-6, 1000e-6); 3],
            c_dc_f: 0.318e-6,
            i_ell_a: 19.966,
            y_siemens: 1e-3,
        }
    }

    /// Check internal consistency; returns the first violation found.
    pub fn validate(&self) -> Result<(), ModelError> {
        if self.n_s == 0 {
            return Err(ModelError::InvalidParameter(
                "n_s must be at least 1".into(),
            ));
        }
        for (what, len) in [
            ("l_tau_h", self.l_tau_h.len()),
            ("r_tau_ohm", self.r_tau_ohm.len()),
            ("l_bounds_h", self.l_bounds_h.len()),
        ] {
            if len != self.n_s {
                return Err(ModelError::LengthMismatch {
                    what,
                    expected: self.n_s,
                    got: len,
                });
            }
        }
        for (i, &l) in self.l_tau_h.iter().enumerate() {
            if !(l.is_finite() && l > 0.0) {
                return Err(ModelError::InvalidParameter(format!(
                    "l_tau_h[{i}] = {l} must be finite and > 0"
                )));
            }
        }
        for (i, &r) in self.r_tau_ohm.iter().enumerate() {
            if !(r.is_finite() && r > 0.0) {
                return Err(ModelError::InvalidParameter(format!(
                    "r_tau_ohm[{i}] = {r} must be finite and > 0"
                )));
            }
        }
        for (i, &(lo, hi)) in self.l_bounds_h.iter().enumerate() {
            if !(lo.is_finite() && hi.is_finite() && 0.0 < lo && lo < hi) {
                return Err(ModelError::InvalidParameter(format!(
                    "l_bounds_h[{i}] = ({lo}, {hi}) must satisfy 0 < min < max"
                )));
            }
            let l = self.l_tau_h[i];
            if !(lo < l && l < hi) {
                return Err(ModelError::InvalidParameter(format!(
                    "l_tau_h[{i}] = {l} must lie strictly inside l_bounds_h[{i}] = ({lo}, {hi})"
                )));
            }
        }
        if !(self.c_dc_f.is_finite() && self.c_dc_f > 0.0) {
            return Err(ModelError::InvalidParameter(format!(
                "c_dc_f = {} must be finite and > 0",
                self.c_dc_f
            )));
        }
        if !self.i_ell_a.is_finite() {
            return Err(ModelError::InvalidParameter(format!(
                "i_ell_a = {} must be finite",
                self.i_ell_a
            )));
        }
        if !(self.y_siemens.is_finite() && self.y_siemens >= 0.0) {
            return Err(ModelError::InvalidParameter(format!(
                "y_siemens = {} must be finite and ≥ 0",
                self.y_siemens
            )));
        }
        Ok(())
    }
}

/// Physical state: line currents and bus voltage.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlantState {
    /// Line currents [A], one per source.
    pub i_tau_a: Vec<f64>,
    /// Bus voltage [V].
    pub v_dc_v: f64,
}

impl PlantState {
    /// De-energized network: zero currents, bus voltage as given.
    pub fn at_rest(n_s: usize, v_dc_v: f64) -> Self {
        PlantState {
            i_tau_a: vec![0.0; n_s],
            v_dc_v,
        }
    }
}

/// Time derivative of [`PlantState`].
#[derive(Debug, Clone, PartialEq)]
pub struct PlantDerivative {
    /// dI/dt [A/s], one per line.
    pub di_tau: Vec<f64>,
    /// dV_dc/dt [V/s].
    pub dv_dc: f64,
}

/// Evaluate the open-loop vector field at `state` under source voltages `u_v`.
///
/// Rejects non-finite inputs rather than letting NaN propagate silently into
/// an integration run.
pub fn plant_derivative(
    params: &PlantParams,
    state: &PlantState,
    u_v: &[f64],
) -> Result<PlantDerivative, ModelError> {
    let n = params.n_s;
    if state.i_tau_a.len() != n {
        return Err(ModelError::LengthMismatch {
            what: "state.i_tau_a",
            expected: n,
            got: state.i_tau_a.len(),
        });
    }
    if u_v.len() != n {
        return Err(ModelError::LengthMismatch {
            what: "u_v",
            expected: n,
            got: u_v.len(),
        });
    }
    if !state.v_dc_v.is_finite() {
        return Err(ModelError::NonFinite("state.v_dc_v"));
    }
    if state.i_tau_a.iter().any(|x| !x.is_finite()) {
        return Err(ModelError::NonFinite("state.i_tau_a"));
    }
    if u_v.iter().any(|x| !x.is_finite()) {
        return Err(ModelError::NonFinite("u_v"));
    }

    let mut di_tau = vec![0.0; n];
    let mut i_sum = 0.0;
    for i in 0..n {
        let i_i = state.i_tau_a[i];
        di_tau[i] = (-state.v_dc_v - params.r_tau_ohm[i] * i_i + u_v[i]) / params.l_tau_h[i];
        i_sum += i_i;
    }
    let i_load = params.i_ell_a + params.y_siemens * state.v_dc_v;
    let dv_dc = (i_sum - i_load) / params.c_dc_f;
    Ok(PlantDerivative { di_tau, dv_dc })
}
