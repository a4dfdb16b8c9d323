//! Analytic structure of the closed loop under the adaptive controller:
//! shifted coordinates, the equilibrium family, the energy (Lyapunov)
//! function with its dissipation identity, and the port-Hamiltonian form.
//!
//! Everything here is assembled independently of the simulation kernel — the
//! kernel composes per-DGU controller calls with the plant, this module
//! writes the already-closed loop directly in the error coordinate
//! `z = I - phi`. That redundancy is the point: tests cross-check the two
//! paths against each other.

use nalgebra::{DMatrix, DVector};

use crate::controllers::{AdaptiveCtrlState, ControllerGains};
use crate::error::ModelError;
use crate::plant::{PlantParams, PlantState};
use crate::scenario::Trajectory;
use crate::simkernel::CommGraph;

/// Closed-loop state in shifted coordinates: the current-tracking error
/// `z = I - phi` replaces the line currents.
#[derive(Debug, Clone, PartialEq)]
pub struct ClosedLoopState {
    /// Current-tracking errors `z_i = I_i - phi_i` [A].
    pub z: Vec<f64>,
    /// Bus voltage [V].
    pub v_dc_v: f64,
    pub phi: Vec<f64>,
    pub theta: Vec<f64>,
    pub rhat_ohm: Vec<f64>,
    pub eta: Vec<f64>,
}

/// Unscaled time derivative of [`ClosedLoopState`].
#[derive(Debug, Clone, PartialEq)]
pub struct ClosedLoopDerivative {
    pub dz: Vec<f64>,
    pub dv_dc: f64,
    pub dphi: Vec<f64>,
    pub dtheta: Vec<f64>,
    pub drhat: Vec<f64>,
    pub deta: Vec<f64>,
}

/// The same derivative, left-multiplied by the diagonal coefficient matrices
/// (`L_i dz_i/dt`, `C dV/dt`, `T_phi dphi/dt`, …).
///
/// The energy chain rule and the port-Hamiltonian identity are exact in
/// these scaled quantities; dividing out a large time constant (the `eta`
/// block runs with `t_eta ~ 1e6`) and multiplying it back in would only
/// launder rounding error, so both checks consume this form directly.
#[derive(Debug, Clone, PartialEq)]
pub struct ScaledClosedLoopDerivative {
    /// `L_i · dz_i/dt` [V].
    pub l_dz: Vec<f64>,
    /// `C · dV/dt` [A].
    pub c_dv: f64,
    /// `T_phi,i · dphi_i/dt`.
    pub t_phi_dphi: Vec<f64>,
    pub t_theta_dtheta: Vec<f64>,
    pub t_rhat_drhat: Vec<f64>,
    pub t_eta_deta: Vec<f64>,
}

/// Combine plant and controller state into shifted coordinates.
pub fn to_closed_loop(plant: &PlantState, ctrl: &AdaptiveCtrlState) -> ClosedLoopState {
    ClosedLoopState {
        z: plant
            .i_tau_a
            .iter()
            .zip(&ctrl.phi)
            .map(|(i, phi)| i - phi)
            .collect(),
        v_dc_v: plant.v_dc_v,
        phi: ctrl.phi.clone(),
        theta: ctrl.theta.clone(),
        rhat_ohm: ctrl.rhat_ohm.clone(),
        eta: ctrl.eta.clone(),
    }
}

/// Invert [`to_closed_loop`]: recover line currents as `I = z + phi`.
pub fn from_closed_loop(cl: &ClosedLoopState) -> (PlantState, AdaptiveCtrlState) {
    (
        PlantState {
            i_tau_a: cl.z.iter().zip(&cl.phi).map(|(z, phi)| z + phi).collect(),
            v_dc_v: cl.v_dc_v,
        },
        AdaptiveCtrlState {
            phi: cl.phi.clone(),
            theta: cl.theta.clone(),
            rhat_ohm: cl.rhat_ohm.clone(),
            eta: cl.eta.clone(),
        },
    )
}

fn check_closed_loop_inputs(
    params: &PlantParams,
    gains: &ControllerGains,
    graph: &CommGraph,
    cl: &ClosedLoopState,
) -> Result<(), ModelError> {
    params.validate()?;
    gains.validate(params.n_s)?;
    if graph.n_s() != params.n_s {
        return Err(ModelError::LengthMismatch {
            what: "graph nodes",
            expected: params.n_s,
            got: graph.n_s(),
        });
    }
    for (what, v) in [
        ("z", &cl.z),
        ("phi", &cl.phi),
        ("theta", &cl.theta),
        ("rhat_ohm", &cl.rhat_ohm),
        ("eta", &cl.eta),
    ] {
        if v.len() != params.n_s {
            return Err(ModelError::LengthMismatch {
                what,
                expected: params.n_s,
                got: v.len(),
            });
        }
        if v.iter().any(|x| !x.is_finite()) {
            return Err(ModelError::NonFinite("closed-loop state"));
        }
    }
    if !cl.v_dc_v.is_finite() {
        return Err(ModelError::NonFinite("closed-loop state"));
    }
    Ok(())
}

/// Closed-loop vector field in shifted coordinates, in scaled form.
pub fn closed_loop_rhs_scaled(
    params: &PlantParams,
    gains: &ControllerGains,
    graph: &CommGraph,
    cl: &ClosedLoopState,
) -> Result<ScaledClosedLoopDerivative, ModelError> {
    check_closed_loop_inputs(params, gains, graph, cl)?;
    let n = params.n_s;

    let mut lap_theta = vec![0.0; n];
    graph.apply_laplacian(&cl.theta, &mut lap_theta);

    // Weighted currents W(z + phi), then their Laplacian for the theta rows.
    let wi: Vec<f64> = (0..n)
        .map(|i| gains.w[i] * (cl.z[i] + cl.phi[i]))
        .collect();
    let mut lap_wi = vec![0.0; n];
    graph.apply_laplacian(&wi, &mut lap_wi);

    let v_err = cl.v_dc_v - gains.v_dc_star_v;

    let mut l_dz = vec![0.0; n];
    let mut t_phi_dphi = vec![0.0; n];
    let mut t_rhat_drhat = vec![0.0; n];
    let mut t_eta_deta = vec![0.0; n];
    let mut i_sum = 0.0;
    for i in 0..n {
        let i_i = cl.z[i] + cl.phi[i];
        i_sum += i_i;
        let drive = -v_err - gains.w[i] * lap_theta[i]; // = T_phi,i dphi_i/dt
        let f_i = drive / gains.t_phi[i];
        t_phi_dphi[i] = drive;
        l_dz[i] = -gains.k_z[i] * cl.z[i] + i_i * (cl.rhat_ohm[i] - params.r_tau_ohm[i]) + drive
            + f_i * (cl.eta[i] - params.l_tau_h[i]);
        t_rhat_drhat[i] = -i_i * cl.z[i];
        t_eta_deta[i] = -f_i * cl.z[i];
    }
    let c_dv = i_sum - params.i_ell_a - params.y_siemens * cl.v_dc_v;
    let t_theta_dtheta = lap_wi;

    Ok(ScaledClosedLoopDerivative {
        l_dz,
        c_dv,
        t_phi_dphi,
        t_theta_dtheta,
        t_rhat_drhat,
        t_eta_deta,
    })
}

/// Closed-loop vector field in shifted coordinates.
pub fn closed_loop_rhs(
    params: &PlantParams,
    gains: &ControllerGains,
    graph: &CommGraph,
    cl: &ClosedLoopState,
) -> Result<ClosedLoopDerivative, ModelError> {
    let s = closed_loop_rhs_scaled(params, gains, graph, cl)?;
    let n = params.n_s;
    Ok(ClosedLoopDerivative {
        dz: (0..n).map(|i| s.l_dz[i] / params.l_tau_h[i]).collect(),
        dv_dc: s.c_dv / params.c_dc_f,
        dphi: (0..n).map(|i| s.t_phi_dphi[i] / gains.t_phi[i]).collect(),
        dtheta: (0..n)
            .map(|i| s.t_theta_dtheta[i] / gains.t_theta[i])
            .collect(),
        drhat: (0..n)
            .map(|i| s.t_rhat_drhat[i] / gains.t_rhat[i])
            .collect(),
        deta: (0..n).map(|i| s.t_eta_deta[i] / gains.t_eta[i]).collect(),
    })
}

/// One member of the closed loop's equilibrium family.
///
/// At equilibrium the tracking error vanishes, the bus sits exactly on the
/// setpoint, every weighted current equals `alpha_a`, the consensus
/// coordinates agree on `beta` (fixed by the conserved weighted sum of their
/// initial values), and the resistance estimates equal the true resistances.
/// The compensation states `eta` are genuinely free; this struct pins them to
/// the true line inductances, the natural representative.
#[derive(Debug, Clone, PartialEq)]
pub struct EquilibriumPoint {
    pub z: Vec<f64>,
    pub v_dc_v: f64,
    pub phi: Vec<f64>,
    pub theta: Vec<f64>,
    pub rhat_ohm: Vec<f64>,
    pub eta: Vec<f64>,
    /// Common weighted current `w_i I_i` [A].
    pub alpha_a: f64,
    /// Common consensus value.
    pub beta: f64,
}

impl EquilibriumPoint {
    /// Steady-state line currents [A] (`= phi`).
    pub fn i_tau_a(&self) -> &[f64] {
        &self.phi
    }

    /// The equilibrium as a [`ClosedLoopState`].
    pub fn closed_loop(&self) -> ClosedLoopState {
        ClosedLoopState {
            z: self.z.clone(),
            v_dc_v: self.v_dc_v,
            phi: self.phi.clone(),
            theta: self.theta.clone(),
            rhat_ohm: self.rhat_ohm.clone(),
            eta: self.eta.clone(),
        }
    }

    /// The equilibrium in plant/controller coordinates, e.g. to warm-start a
    /// simulation.
    pub fn initial_state(&self) -> (PlantState, AdaptiveCtrlState) {
        from_closed_loop(&self.closed_loop())
    }
}

/// Compute the equilibrium the loop converges to, given the consensus
/// coordinates it was started with (their `t_theta`-weighted sum is
/// conserved and selects `beta`).
pub fn compute_equilibrium(
    params: &PlantParams,
    gains: &ControllerGains,
    theta_0: &[f64],
) -> Result<EquilibriumPoint, ModelError> {
    params.validate()?;
    gains.validate(params.n_s)?;
    let n = params.n_s;
    if theta_0.len() != n {
        return Err(ModelError::LengthMismatch {
            what: "theta_0",
            expected: n,
            got: theta_0.len(),
        });
    }
    if theta_0.iter().any(|x| !x.is_finite()) {
        return Err(ModelError::NonFinite("theta_0"));
    }

    let v_star = gains.v_dc_star_v;
    let total_load = params.i_ell_a + params.y_siemens * v_star;
    let inv_w_sum: f64 = gains.w.iter().map(|w| 1.0 / w).sum();
    let alpha = total_load / inv_w_sum;

    let weighted_theta: f64 = gains
        .t_theta
        .iter()
        .zip(theta_0)
        .map(|(t, th)| t * th)
        .sum();
    let t_theta_sum: f64 = gains.t_theta.iter().sum();
    let beta = weighted_theta / t_theta_sum;

    Ok(EquilibriumPoint {
        z: vec![0.0; n],
        v_dc_v: v_star,
        phi: gains.w.iter().map(|w| alpha / w).collect(),
        theta: vec![beta; n],
        rhat_ohm: params.r_tau_ohm.clone(),
        eta: params.l_tau_h.clone(),
        alpha_a: alpha,
        beta,
    })
}

/// Largest absolute component of the unscaled closed-loop derivative at an
/// equilibrium candidate — the residual a claimed equilibrium has to answer
/// for.
pub fn equilibrium_residual(
    params: &PlantParams,
    gains: &ControllerGains,
    graph: &CommGraph,
    eq: &EquilibriumPoint,
) -> Result<f64, ModelError> {
    let d = closed_loop_rhs(params, gains, graph, &eq.closed_loop())?;
    let mut r: f64 = d.dv_dc.abs();
    for v in [&d.dz, &d.dphi, &d.dtheta, &d.drhat, &d.deta] {
        for x in v {
            r = r.max(x.abs());
        }
    }
    Ok(r)
}

/// Energy distance from the equilibrium: a weighted sum of squares over all
/// six state blocks,
///
/// ```text
/// S = ½ [ Σ L_i z_i² + C (V-V̄)² + Σ T_phi (phi-phī)² + Σ T_theta (θ-θ̄)²
///       + Σ T_rhat (rhat-R)² + Σ T_eta (eta-L)² ]
/// ```
///
/// Radially unbounded, zero exactly at the equilibrium family member `eq`.
pub fn lyapunov_s(
    params: &PlantParams,
    gains: &ControllerGains,
    cl: &ClosedLoopState,
    eq: &EquilibriumPoint,
) -> f64 {
    let n = params.n_s;
    let mut s = params.c_dc_f * (cl.v_dc_v - eq.v_dc_v).powi(2);
    for i in 0..n {
        s += params.l_tau_h[i] * (cl.z[i] - eq.z[i]).powi(2);
        s += gains.t_phi[i] * (cl.phi[i] - eq.phi[i]).powi(2);
        s += gains.t_theta[i] * (cl.theta[i] - eq.theta[i]).powi(2);
        s += gains.t_rhat[i] * (cl.rhat_ohm[i] - eq.rhat_ohm[i]).powi(2);
        s += gains.t_eta[i] * (cl.eta[i] - eq.eta[i]).powi(2);
    }
    0.5 * s
}

/// dS/dt computed two independent ways.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SDot {
    /// The closed-form dissipation: `-Σ k_z,i z_i² - Y (V-V̄)²`.
    pub analytic: f64,
    /// The chain rule `∇S · dx/dt`, using the scaled derivatives so no
    /// time constant is divided out and multiplied back.
    pub chain_rule: f64,
}

/// Evaluate dS/dt along the closed loop at `cl`, both as the closed-form
/// dissipation rate and via the chain rule. The two must agree to rounding;
/// their difference is a direct probe of the energy identity.
pub fn lyapunov_s_dot(
    params: &PlantParams,
    gains: &ControllerGains,
    graph: &CommGraph,
    cl: &ClosedLoopState,
    eq: &EquilibriumPoint,
) -> Result<SDot, ModelError> {
    let s = closed_loop_rhs_scaled(params, gains, graph, cl)?;
    let n = params.n_s;

    let v_err = cl.v_dc_v - eq.v_dc_v;
    let mut analytic = -params.y_siemens * v_err * v_err;
    for i in 0..n {
        analytic -= gains.k_z[i] * cl.z[i] * cl.z[i];
    }

    // ∇S · dx/dt where the coefficient matrices of S cancel against the
    // scaled derivatives: d/dt ½ L z² = z · (L dz/dt), etc.
    let mut chain = v_err * s.c_dv;
    for i in 0..n {
        chain += (cl.z[i] - eq.z[i]) * s.l_dz[i];
        chain += (cl.phi[i] - eq.phi[i]) * s.t_phi_dphi[i];
        chain += (cl.theta[i] - eq.theta[i]) * s.t_theta_dtheta[i];
        chain += (cl.rhat_ohm[i] - eq.rhat_ohm[i]) * s.t_rhat_drhat[i];
        chain += (cl.eta[i] - eq.eta[i]) * s.t_eta_deta[i];
    }

    Ok(SDot {
        analytic,
        chain_rule: chain,
    })
}

/// Result of the port-Hamiltonian structure check at one state.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PhFormCheck {
    /// `max |(J - R) ∇H - M ẋ|` over all components, where `M ẋ` are the
    /// scaled derivatives.
    pub residual_inf: f64,
    /// `1 + max(‖(J - R) ∇H‖_∞, ‖M ẋ‖_∞)`; tolerances are relative to this.
    pub scale: f64,
    /// `max |J + Jᵀ|` — exact skew-symmetry of the interconnection matrix.
    pub skew_residual_inf: f64,
    /// Smallest diagonal entry of R (all off-diagonals are structurally
    /// zero); R ⪰ 0 iff this is ≥ 0.
    pub r_min_diag: f64,
}

impl PhFormCheck {
    pub fn passes(&self, tol_rel: f64) -> bool {
        self.residual_inf <= tol_rel * self.scale
            && self.skew_residual_inf <= tol_rel * self.scale
            && self.r_min_diag >= 0.0
    }
}

/// Verify the port-Hamiltonian structure of the closed loop at `cl`.
///
/// Assembles the state-dependent interconnection matrix `J` (skew-symmetric)
/// and dissipation matrix `R = diag(k_z, Y, 0, …, 0)` in the block order
/// `(z, V, phi, theta, rhat, eta)` and checks
///
/// ```text
/// (J - R) ∇H = M ẋ,   ∇H = (z, V-V*, phi-phī, theta, rhat-R, eta-L)
/// ```
///
/// against the independently assembled closed-loop derivative. The identity
/// holds for every member of the equilibrium family; the gradient here uses
/// the representative with `beta = 0`. Note `phī` must be exactly the
/// proportional-sharing point — any other choice breaks the `theta` rows.
pub fn ph_form_check(
    params: &PlantParams,
    gains: &ControllerGains,
    graph: &CommGraph,
    cl: &ClosedLoopState,
) -> Result<PhFormCheck, ModelError> {
    let scaled = closed_loop_rhs_scaled(params, gains, graph, cl)?;
    let n = params.n_s;
    let dim = 5 * n + 1;

    // Block offsets in (z, V, phi, theta, rhat, eta).
    let off_z = 0;
    let off_v = n;
    let off_phi = n + 1;
    let off_theta = 2 * n + 1;
    let off_rhat = 3 * n + 1;
    let off_eta = 4 * n + 1;

    let lap = graph.laplacian();
    let mut j = DMatrix::<f64>::zeros(dim, dim);

    // Power-conserving coupling between the bus and the current-like blocks.
    for i in 0..n {
        j[(off_z + i, off_v)] = -1.0;
        j[(off_v, off_z + i)] = 1.0;
        j[(off_v, off_phi + i)] = 1.0;
        j[(off_phi + i, off_v)] = -1.0;
    }

    // State-dependent couplings of the z rows: -W·Lap into theta,
    // diag(I) into rhat, diag(F) into eta; phi couples to theta the same
    // way. The lower-left blocks are the negated transposes, filled in the
    // same pass so skew-symmetry is exact by construction.
    let v_err = cl.v_dc_v - gains.v_dc_star_v;
    for i in 0..n {
        let mut lap_theta_i = 0.0;
        for k in 0..n {
            let wl = gains.w[i] * lap[i][k];
            if wl != 0.0 {
                j[(off_z + i, off_theta + k)] = -wl;
                j[(off_theta + k, off_z + i)] = wl;
                j[(off_phi + i, off_theta + k)] = -wl;
                j[(off_theta + k, off_phi + i)] = wl;
            }
            lap_theta_i += lap[i][k] * cl.theta[k];
        }
        let i_i = cl.z[i] + cl.phi[i];
        let f_i = (-v_err - gains.w[i] * lap_theta_i) / gains.t_phi[i];
        j[(off_z + i, off_rhat + i)] = i_i;
        j[(off_rhat + i, off_z + i)] = -i_i;
        j[(off_z + i, off_eta + i)] = f_i;
        j[(off_eta + i, off_z + i)] = -f_i;
    }

    let mut r_diag = DVector::<f64>::zeros(dim);
    for i in 0..n {
        r_diag[off_z + i] = gains.k_z[i];
    }
    r_diag[off_v] = params.y_siemens;

    // Gradient of H at the beta = 0 representative of the equilibrium
    // family.
    let eq = compute_equilibrium(params, gains, &vec![0.0; n])?;
    let mut grad = DVector::<f64>::zeros(dim);
    for i in 0..n {
        grad[off_z + i] = cl.z[i];
        grad[off_phi + i] = cl.phi[i] - eq.phi[i];
        grad[off_theta + i] = cl.theta[i] - eq.theta[i];
        grad[off_rhat + i] = cl.rhat_ohm[i] - params.r_tau_ohm[i];
        grad[off_eta + i] = cl.eta[i] - params.l_tau_h[i];
    }
    grad[off_v] = v_err;

    let mut lhs = &j * &grad;
    for d in 0..dim {
        lhs[d] -= r_diag[d] * grad[d];
    }

    let mut rhs = DVector::<f64>::zeros(dim);
    for i in 0..n {
        rhs[off_z + i] = scaled.l_dz[i];
        rhs[off_phi + i] = scaled.t_phi_dphi[i];
        rhs[off_theta + i] = scaled.t_theta_dtheta[i];
        rhs[off_rhat + i] = scaled.t_rhat_drhat[i];
        rhs[off_eta + i] = scaled.t_eta_deta[i];
    }
    rhs[off_v] = scaled.c_dv;

    let mut residual_inf = 0.0f64;
    let mut norm_lhs = 0.0f64;
    let mut norm_rhs = 0.0f64;
    for d in 0..dim {
        residual_inf = residual_inf.max((lhs[d] - rhs[d]).abs());
        norm_lhs = norm_lhs.max(lhs[d].abs());
        norm_rhs = norm_rhs.max(rhs[d].abs());
    }

    let mut skew = 0.0f64;
    for a in 0..dim {
        for b in 0..dim {
            skew = skew.max((j[(a, b)] + j[(b, a)]).abs());
        }
    }

    Ok(PhFormCheck {
        residual_inf,
        scale: 1.0 + norm_lhs.max(norm_rhs),
        skew_residual_inf: skew,
        r_min_diag: r_diag.min(),
    })
}

/// Drift of the conserved quantity `Σ t_theta,i · theta_i(t)` along a
/// recorded trajectory.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InvariantDrift {
    /// Value at the first sample.
    pub initial: f64,
    /// Largest deviation from the initial value over all samples.
    pub max_abs_drift: f64,
}

/// Check the conservation law of the consensus block: the communication
/// Laplacian drives `theta` only along directions that keep the
/// `t_theta`-weighted sum constant, so that sum is a run-long invariant
/// (exactly in the ODE; to integration accuracy in a recorded run).
pub fn check_invariant_set(traj: &Trajectory, gains: &ControllerGains) -> Result<InvariantDrift, ModelError> {
    gains.validate(traj.n_s)?;
    let weighted_sum = |theta: &[f64]| -> f64 {
        gains
            .t_theta
            .iter()
            .zip(theta)
            .map(|(t, th)| t * th)
            .sum()
    };
    let mut samples_theta = traj.samples.iter().map(|s| s.theta.as_slice());
    let first = match samples_theta.next() {
        Some(th) => weighted_sum(th),
        None => weighted_sum(&traj.final_ctrl.theta),
    };
    let mut max_drift = (weighted_sum(&traj.final_ctrl.theta) - first).abs();
    for th in samples_theta {
        max_drift = max_drift.max((weighted_sum(th) - first).abs());
    }
    Ok(InvariantDrift {
        initial: first,
        max_abs_drift: max_drift,
    })
}
