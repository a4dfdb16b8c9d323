//! The three source-voltage controllers.
//!
//! * **C1** — distributed adaptive controller. Each DGU runs four local
//!   integrators: `phi` (a filtered current reference driven by the bus
//!   voltage error and by consensus), `theta` (the consensus coordinate
//!   exchanged with neighbors), `rhat` (an online estimate of the own line
//!   resistance), and `eta` (an adaptive compensation state that absorbs the
//!   unknown line inductance). Only `theta`, the weighted own current, and
//!   the bus voltage travel over the network.
//! * **C2** — decentralized droop, `u_i = V* - k_i I_i`. No communication,
//!   no integrators; trades a steady-state voltage error for simplicity.
//! * **C3** — consensus current sharing that assumes the line resistances
//!   are known: `u_i = V* + R_i I_i - w_i Σ(θ_i - θ_j)`. Same `theta`
//!   dynamics as C1 but no adaptation, so a wrong resistance table shifts
//!   (or destabilizes) the loop.
//!
//! Every C1/C3 function takes one DGU's own measurements plus a
//! [`NeighborView`] of received data, never the global state: what you can
//! compute here is exactly what a real unit could compute from its own
//! sensors and its mailbox.

use serde::{Deserialize, Serialize};

use crate::error::ModelError;
use crate::plant::PlantParams;

/// Gains of the adaptive controller (shared by C3 where applicable).
///
/// The `t_*` vectors are integrator time constants (larger = slower), `k_z`
/// damps the current-tracking error, `w` holds the sharing weights (DGU `i`
/// should carry a current proportional to `1/w_i`), and `v_dc_star_v` is the
/// bus voltage setpoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ControllerGains {
    /// Time constants of the `phi` integrators, one per DGU.
    pub t_phi: Vec<f64>,
    /// Time constants of the `theta` (consensus) integrators.
    pub t_theta: Vec<f64>,
    /// Time constants of the resistance estimators.
    pub t_rhat: Vec<f64>,
    /// Time constants of the inductance-compensation states.
    pub t_eta: Vec<f64>,
    /// Current-error feedback gains, each > 0.
    pub k_z: Vec<f64>,
    /// Current-sharing weights, each > 0.
    pub w: Vec<f64>,
    /// Bus voltage setpoint [V].
    pub v_dc_star_v: f64,
}

impl ControllerGains {
    /// Gain set used by the shipped configuration: unit `phi`/`theta` time
    /// constants, deliberately slow resistance adaptation, an `eta` loop slow
    /// enough to stay out of the way, and uniform sharing weights.
    pub fn bench_defaults(n_s: usize) -> Self {
        ControllerGains {
            t_phi: vec![1.0; n_s],
            t_theta: vec![1.0; n_s],
            t_rhat: vec![10.0; n_s],
            t_eta: vec![1e6; n_s],
            k_z: vec![2.0; n_s],
            w: vec![1.0; n_s],
            v_dc_star_v: 200.0,
        }
    }

    /// Check lengths and sign constraints against a given network size.
    pub fn validate(&self, n_s: usize) -> Result<(), ModelError> {
        for (what, v) in [
            ("t_phi", &self.t_phi),
            ("t_theta", &self.t_theta),
            ("t_rhat", &self.t_rhat),
            ("t_eta", &self.t_eta),
            ("k_z", &self.k_z),
            ("w", &self.w),
        ] {
            if v.len() != n_s {
                return Err(ModelError::LengthMismatch {
                    what,
                    expected: n_s,
                    got: v.len(),
                });
            }
            if let Some((i, &x)) = v.iter().enumerate().find(|(_, x)| !(x.is_finite() && **x > 0.0))
            {
                return Err(ModelError::InvalidParameter(format!(
                    "{what}[{i}] = {x} must be finite and > 0"
                )));
            }
        }
        if !(self.v_dc_star_v.is_finite() && self.v_dc_star_v > 0.0) {
            return Err(ModelError::InvalidParameter(format!(
                "v_dc_star_v = {} must be finite and > 0",
                self.v_dc_star_v
            )));
        }
        Ok(())
    }
}

/// Controller state of the whole network, one entry per DGU.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdaptiveCtrlState {
    /// Filtered current references [A].
    pub phi: Vec<f64>,
    /// Consensus coordinates.
    pub theta: Vec<f64>,
    /// Line-resistance estimates [Ω].
    pub rhat_ohm: Vec<f64>,
    /// Inductance-compensation states [H].
    pub eta: Vec<f64>,
}

impl AdaptiveCtrlState {
    /// All integrators at zero (the usual cold start).
    pub fn zeroed(n_s: usize) -> Self {
        AdaptiveCtrlState {
            phi: vec![0.0; n_s],
            theta: vec![0.0; n_s],
            rhat_ohm: vec![0.0; n_s],
            eta: vec![0.0; n_s],
        }
    }

    /// One DGU's slice of the state.
    pub fn dgu(&self, i: usize) -> DguCtrlState {
        DguCtrlState {
            phi: self.phi[i],
            theta: self.theta[i],
            rhat_ohm: self.rhat_ohm[i],
            eta: self.eta[i],
        }
    }

    pub fn validate(&self, n_s: usize) -> Result<(), ModelError> {
        for (what, v) in [
            ("phi", &self.phi),
            ("theta", &self.theta),
            ("rhat_ohm", &self.rhat_ohm),
            ("eta", &self.eta),
        ] {
            if v.len() != n_s {
                return Err(ModelError::LengthMismatch {
                    what,
                    expected: n_s,
                    got: v.len(),
                });
            }
            if v.iter().any(|x| !x.is_finite()) {
                return Err(ModelError::NonFinite("controller state"));
            }
        }
        Ok(())
    }
}

/// Time derivative of [`AdaptiveCtrlState`].
#[derive(Debug, Clone, PartialEq)]
pub struct AdaptiveCtrlDerivative {
    pub dphi: Vec<f64>,
    pub dtheta: Vec<f64>,
    pub drhat: Vec<f64>,
    pub deta: Vec<f64>,
}

/// One DGU's controller state.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DguCtrlState {
    pub phi: f64,
    pub theta: f64,
    pub rhat_ohm: f64,
    pub eta: f64,
}

/// Time derivative of one DGU's controller state.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DguCtrlDerivative {
    pub dphi: f64,
    pub dtheta: f64,
    pub drhat: f64,
    pub deta: f64,
}

/// What DGU `i` measures locally: its own line current and the (broadcast)
/// bus voltage.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OwnMeasurements {
    /// Own line current [A].
    pub i_tau_a: f64,
    /// Bus voltage [V] as seen by this DGU (possibly delayed or noisy).
    pub v_dc_v: f64,
}

/// Data DGU `i` received from its communication neighbors, one entry per
/// neighbor in a fixed order: their weighted-sharing inputs and consensus
/// coordinates.
#[derive(Debug, Clone, Copy)]
pub struct NeighborView<'a> {
    /// Neighbor line currents [A].
    pub i_tau_a: &'a [f64],
    /// Neighbor consensus coordinates.
    pub theta: &'a [f64],
    /// Neighbor sharing weights.
    pub w: &'a [f64],
}

impl NeighborView<'_> {
    fn check(&self) -> Result<(), ModelError> {
        if self.theta.len() != self.i_tau_a.len() || self.w.len() != self.i_tau_a.len() {
            return Err(ModelError::LengthMismatch {
                what: "neighbor view fields",
                expected: self.i_tau_a.len(),
                got: self.theta.len().min(self.w.len()),
            });
        }
        let finite = |s: &[f64]| s.iter().all(|x| x.is_finite());
        if !(finite(self.i_tau_a) && finite(self.theta) && finite(self.w)) {
            return Err(ModelError::NonFinite("neighbor view"));
        }
        Ok(())
    }
}

/// Control voltage and state derivative of one adaptive DGU, computed
/// together so the shared internal drive term is evaluated exactly once.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct C1Eval {
    /// Source voltage command [V].
    pub u_v: f64,
    /// Local controller state derivative.
    pub deriv: DguCtrlDerivative,
}

/// Evaluate adaptive DGU `i`: control law and state derivative in one pass.
///
/// The drive term `F_i = dphi_i/dt` appears both inside the control law
/// (multiplying `eta_i`) and as the `phi` derivative; computing it once keeps
/// the two bit-identical, which the energy-decay identity relies on.
///
/// Shape and finiteness of the inputs are the caller's job (checked only in
/// debug builds); the public wrappers [`c1_control_law`] and
/// [`c1_state_derivative`] validate.
pub fn c1_evaluate(
    gains: &ControllerGains,
    i: usize,
    dgu: &DguCtrlState,
    own: &OwnMeasurements,
    nbrs: &NeighborView,
) -> C1Eval {
    debug_assert!(i < gains.w.len());
    debug_assert_eq!(nbrs.i_tau_a.len(), nbrs.theta.len());
    debug_assert_eq!(nbrs.i_tau_a.len(), nbrs.w.len());

    let w_i = gains.w[i];
    // Graph-Laplacian sums over the neighborhood:
    //   lap_theta = Σ_j (θ_i − θ_j)        (consensus disagreement)
    //   lap_wi    = Σ_j (w_i I_i − w_j I_j) (weighted-current disagreement)
    let mut lap_theta = 0.0;
    let mut lap_wi = 0.0;
    for j in 0..nbrs.theta.len() {
        lap_theta += dgu.theta - nbrs.theta[j];
        lap_wi += w_i * own.i_tau_a - nbrs.w[j] * nbrs.i_tau_a[j];
    }

    let v_err = own.v_dc_v - gains.v_dc_star_v;
    let f_i = (-v_err - w_i * lap_theta) / gains.t_phi[i]; // = dphi_i/dt
    let z_i = own.i_tau_a - dgu.phi;

    let u_v = -gains.k_z[i] * z_i + dgu.rhat_ohm * own.i_tau_a + gains.v_dc_star_v
        + f_i * dgu.eta
        - w_i * lap_theta;

    C1Eval {
        u_v,
        deriv: DguCtrlDerivative {
            dphi: f_i,
            dtheta: lap_wi / gains.t_theta[i],
            drhat: -own.i_tau_a * z_i / gains.t_rhat[i],
            deta: -f_i * z_i / gains.t_eta[i],
        },
    }
}

fn c1_check_inputs(
    gains: &ControllerGains,
    state: &AdaptiveCtrlState,
    i: usize,
    own: &OwnMeasurements,
    nbrs: &NeighborView,
) -> Result<(), ModelError> {
    let n_s = gains.w.len();
    gains.validate(n_s)?;
    state.validate(n_s)?;
    if i >= n_s {
        return Err(ModelError::InvalidParameter(format!(
            "DGU index {i} out of range for n_s = {n_s}"
        )));
    }
    if !(own.i_tau_a.is_finite() && own.v_dc_v.is_finite()) {
        return Err(ModelError::NonFinite("own measurements"));
    }
    nbrs.check()
}

/// Derivative of DGU `i`'s four controller states.
pub fn c1_state_derivative(
    gains: &ControllerGains,
    state: &AdaptiveCtrlState,
    i: usize,
    own: &OwnMeasurements,
    nbrs: &NeighborView,
) -> Result<DguCtrlDerivative, ModelError> {
    c1_check_inputs(gains, state, i, own, nbrs)?;
    Ok(c1_evaluate(gains, i, &state.dgu(i), own, nbrs).deriv)
}

/// Source voltage command [V] of adaptive DGU `i`.
pub fn c1_control_law(
    gains: &ControllerGains,
    state: &AdaptiveCtrlState,
    i: usize,
    own: &OwnMeasurements,
    nbrs: &NeighborView,
) -> Result<f64, ModelError> {
    c1_check_inputs(gains, state, i, own, nbrs)?;
    Ok(c1_evaluate(gains, i, &state.dgu(i), own, nbrs).u_v)
}

/// Droop gains (baseline C2).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DroopGains {
    /// Droop slopes [Ω], each > 0; proportional sharing wants
    /// `k_i ∝ 1/w_i`.
    pub k_droop_ohm: Vec<f64>,
    /// Bus voltage setpoint [V].
    pub v_dc_star_v: f64,
}

impl DroopGains {
    pub fn validate(&self, n_s: usize) -> Result<(), ModelError> {
        if self.k_droop_ohm.len() != n_s {
            return Err(ModelError::LengthMismatch {
                what: "k_droop_ohm",
                expected: n_s,
                got: self.k_droop_ohm.len(),
            });
        }
        if let Some((i, &k)) = self
            .k_droop_ohm
            .iter()
            .enumerate()
            .find(|(_, k)| !(k.is_finite() && **k > 0.0))
        {
            return Err(ModelError::InvalidParameter(format!(
                "k_droop_ohm[{i}] = {k} must be finite and > 0"
            )));
        }
        if !(self.v_dc_star_v.is_finite() && self.v_dc_star_v > 0.0) {
            return Err(ModelError::InvalidParameter(format!(
                "v_dc_star_v = {} must be finite and > 0",
                self.v_dc_star_v
            )));
        }
        Ok(())
    }
}

/// Droop control law (baseline C2): `u_i = V* - k_i I_i`. Purely local and
/// static, so it is infallible given valid gains.
pub fn c2_droop(gains: &DroopGains, i: usize, i_tau_a: f64) -> f64 {
    gains.v_dc_star_v - gains.k_droop_ohm[i] * i_tau_a
}

/// Evaluate consensus DGU `i` under an assumed resistance table: voltage
/// command and `theta` derivative. Input shapes are the caller's job
/// (checked only in debug builds); [`c3_known_r_consensus`] is the
/// validating wrapper.
pub fn c3_evaluate(
    gains: &ControllerGains,
    assumed_r_ohm: &[f64],
    i: usize,
    theta_i: f64,
    own: &OwnMeasurements,
    nbrs: &NeighborView,
) -> (f64, f64) {
    debug_assert!(i < gains.w.len());
    debug_assert_eq!(nbrs.i_tau_a.len(), nbrs.theta.len());
    debug_assert_eq!(nbrs.i_tau_a.len(), nbrs.w.len());

    let w_i = gains.w[i];
    let mut lap_theta = 0.0;
    let mut lap_wi = 0.0;
    for j in 0..nbrs.theta.len() {
        lap_theta += theta_i - nbrs.theta[j];
        lap_wi += w_i * own.i_tau_a - nbrs.w[j] * nbrs.i_tau_a[j];
    }
    let u_v = gains.v_dc_star_v + assumed_r_ohm[i] * own.i_tau_a - w_i * lap_theta;
    let dtheta = lap_wi / gains.t_theta[i];
    (u_v, dtheta)
}

/// Consensus control law with an assumed resistance table (baseline C3).
///
/// Returns the voltage command and the `theta` derivative. Reuses `w`,
/// `t_theta`, and the setpoint from [`ControllerGains`]; `assumed_r_ohm[i]`
/// is what this controller believes DGU `i`'s line resistance to be — the
/// loop is only guaranteed well-behaved when the table is accurate.
pub fn c3_known_r_consensus(
    gains: &ControllerGains,
    assumed_r_ohm: &[f64],
    i: usize,
    theta_i: f64,
    own: &OwnMeasurements,
    nbrs: &NeighborView,
) -> Result<(f64, f64), ModelError> {
    let n_s = gains.w.len();
    gains.validate(n_s)?;
    if assumed_r_ohm.len() != n_s {
        return Err(ModelError::LengthMismatch {
            what: "assumed_r_ohm",
            expected: n_s,
            got: assumed_r_ohm.len(),
        });
    }
    if i >= n_s {
        return Err(ModelError::InvalidParameter(format!(
            "DGU index {i} out of range for n_s = {n_s}"
        )));
    }
    if !(own.i_tau_a.is_finite() && own.v_dc_v.is_finite() && theta_i.is_finite()) {
        return Err(ModelError::NonFinite("own measurements"));
    }
    nbrs.check()?;
    Ok(c3_evaluate(gains, assumed_r_ohm, i, theta_i, own, nbrs))
}

/// One row of the gain-condition report.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GainCheckRow {
    pub dgu: usize,
    /// Required strict lower bound on `t_phi`: the width of the inductance
    /// uncertainty interval [H].
    pub l_spread_h: f64,
    pub t_phi: f64,
    /// `t_phi - l_spread_h`; must be > 0.
    pub margin: f64,
    pub ok: bool,
}

/// Result of [`verify_gains`].
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GainReport {
    pub rows: Vec<GainCheckRow>,
    pub pass: bool,
}

/// Check the adaptive controller's stability condition on the `phi` time
/// constants: each `t_phi[i]` must strictly exceed the width of the known
/// inductance interval of line `i`. Equality counts as a failure.
pub fn verify_gains(
    gains: &ControllerGains,
    params: &PlantParams,
) -> Result<GainReport, ModelError> {
    params.validate()?;
    gains.validate(params.n_s)?;
    let rows: Vec<GainCheckRow> = (0..params.n_s)
        .map(|i| {
            let (lo, hi) = params.l_bounds_h[i];
            let spread = hi - lo;
            let margin = gains.t_phi[i] - spread;
            GainCheckRow {
                dgu: i,
                l_spread_h: spread,
                t_phi: gains.t_phi[i],
                margin,
                ok: margin > 0.0,
            }
        })
        .collect();
    let pass = rows.iter().all(|r| r.ok);
    Ok(GainReport { rows, pass })
}
