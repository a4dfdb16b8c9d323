//! Deterministic fixed-step integration of the closed loop.
//!
//! The kernel advances the monolithic state
//!
//! ```text
//! x = [ I_1..I_n | V_dc | phi_1..n | theta_1..n | rhat_1..n | eta_1..n ]
//! ```
//!
//! with classic RK4 (or explicit Euler) at a fixed step, under one of the
//! three controllers. Controllers only ever see measurements and received
//! neighbor data, assembled here; with a communication delay configured,
//! received values (neighbor currents and consensus coordinates, plus the
//! broadcast bus voltage) come from a zero-order-hold [`DelayBuffer`] and are
//! frozen across the substeps of one step, while each DGU's own measurements
//! stay live. With zero delay the buffer is bypassed entirely, so the kernel
//! integrates exactly the ideal coupled ODE.
//!
//! Runs are bit-reproducible: fixed iteration order, no threading inside a
//! run, and measurement noise (optional, default off) comes from a
//! counter-free seeded generator.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::controllers::{
    c1_evaluate, c2_droop, c3_evaluate, AdaptiveCtrlState, ControllerGains, DguCtrlState,
    DroopGains, NeighborView, OwnMeasurements,
};
use crate::error::{ModelError, SimError};
use crate::plant::{PlantParams, PlantState};
use crate::scenario::{Scenario, Trajectory, TrajectorySample};

/// Undirected communication graph plus the (uniform) link delay.
///
/// Construction normalizes and deduplicates edges and rejects disconnected
/// graphs: the sharing and consensus claims all assume connectivity.
#[derive(Debug, Clone, PartialEq)]
pub struct CommGraph {
    n_s: usize,
    edges: Vec<(usize, usize)>,
    neighbors: Vec<Vec<usize>>,
    delay_s: f64,
}

impl CommGraph {
    pub fn new(n_s: usize, edges: &[(usize, usize)], delay_s: f64) -> Result<Self, ModelError> {
        if n_s == 0 {
            return Err(ModelError::InvalidParameter(
                "graph needs at least one node".into(),
            ));
        }
        if !(delay_s.is_finite() && delay_s >= 0.0) {
            return Err(ModelError::InvalidParameter(format!(
                "delay_s = {delay_s} must be finite and ≥ 0"
            )));
        }
        let mut normalized: Vec<(usize, usize)> = Vec::with_capacity(edges.len());
        for &(a, b) in edges {
            if a == b {
                return Err(ModelError::InvalidParameter(format!(
                    "self-loop at node {a}"
                )));
            }
            if a >= n_s || b >= n_s {
                return Err(ModelError::InvalidParameter(format!(
                    "edge ({a}, {b}) out of range for n_s = {n_s}"
                )));
            }
            normalized.push((a.min(b), a.max(b)));
        }
        normalized.sort_unstable();
        normalized.dedup();

        let mut neighbors = vec![Vec::new(); n_s];
        for &(a, b) in &normalized {
            neighbors[a].push(b);
            neighbors[b].push(a);
        }
        for nb in &mut neighbors {
            nb.sort_unstable();
        }

        // Connectivity check (BFS from node 0).
        let mut seen = vec![false; n_s];
        let mut queue = vec![0usize];
        seen[0] = true;
        while let Some(v) = queue.pop() {
            for &u in &neighbors[v] {
                if !seen[u] {
                    seen[u] = true;
                    queue.push(u);
                }
            }
        }
        if seen.iter().any(|s| !s) {
            return Err(ModelError::InvalidParameter(
                "communication graph is not connected".into(),
            ));
        }

        Ok(CommGraph {
            n_s,
            edges: normalized,
            neighbors,
            delay_s,
        })
    }

    /// Path graph `0 - 1 - … - (n_s-1)`.
    pub fn path(n_s: usize, delay_s: f64) -> Result<Self, ModelError> {
        let edges: Vec<(usize, usize)> = (1..n_s).map(|i| (i - 1, i)).collect();
        Self::new(n_s, &edges, delay_s)
    }

    pub fn n_s(&self) -> usize {
        self.n_s
    }

    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    pub fn neighbors(&self, i: usize) -> &[usize] {
        &self.neighbors[i]
    }

    pub fn delay_s(&self) -> f64 {
        self.delay_s
    }

    pub fn max_degree(&self) -> usize {
        self.neighbors.iter().map(Vec::len).max().unwrap_or(0)
    }

    /// Dense graph Laplacian (unit edge weights), row-major.
    pub fn laplacian(&self) -> Vec<Vec<f64>> {
        let mut lap = vec![vec![0.0; self.n_s]; self.n_s];
        for i in 0..self.n_s {
            lap[i][i] = self.neighbors[i].len() as f64;
            for &j in &self.neighbors[i] {
                lap[i][j] = -1.0;
            }
        }
        lap
    }

    /// `out_i = Σ_{j ∈ N(i)} (x_i - x_j)`, the Laplacian applied to `x`.
    pub fn apply_laplacian(&self, x: &[f64], out: &mut [f64]) {
        debug_assert_eq!(x.len(), self.n_s);
        debug_assert_eq!(out.len(), self.n_s);
        for i in 0..self.n_s {
            let mut acc = 0.0;
            for &j in &self.neighbors[i] {
                acc += x[i] - x[j];
            }
            out[i] = acc;
        }
    }
}

/// Time-stepping scheme.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    /// Classic fourth-order Runge–Kutta.
    Rk4,
    /// Explicit Euler. First-order and only conditionally stable on this
    /// stiff plant — kept as a reference scheme, not a default.
    Euler,
}

/// Fixed-step integrator settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IntegratorConfig {
    pub method: Method,
    /// Step size [s]. The LC dynamics of the bench network are resolved
    /// comfortably at 1e-7; above `2e-7` a warning is logged.
    pub step_s: f64,
    /// Keep every k-th step in the trajectory (≥ 1).
    pub record_every: usize,
    /// Optional hard stop [s]; otherwise the scenario length decides.
    pub t_end_s: Option<f64>,
}

/// Step size above which accuracy on the bench network degrades enough to
/// warrant a warning.
pub const STEP_WARN_THRESHOLD_S: f64 = 2e-7;

impl IntegratorConfig {
    pub fn validate(&self) -> Result<(), ModelError> {
        if !(self.step_s.is_finite() && self.step_s > 0.0) {
            return Err(ModelError::InvalidParameter(format!(
                "step_s = {} must be finite and > 0",
                self.step_s
            )));
        }
        if self.record_every == 0 {
            return Err(ModelError::InvalidParameter(
                "record_every must be ≥ 1".into(),
            ));
        }
        if let Some(t) = self.t_end_s {
            if !(t.is_finite() && t > 0.0) {
                return Err(ModelError::InvalidParameter(format!(
                    "t_end_s = {t} must be finite and > 0"
                )));
            }
        }
        Ok(())
    }
}

/// Optional zero-mean Gaussian noise on measured quantities (bus voltage and
/// line currents) as seen by the controllers; the plant always evolves from
/// the true state. One sample per sensor per step, frozen across substeps.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MeasurementNoise {
    /// Standard deviation of the bus-voltage measurement [V].
    pub sigma_v_v: f64,
    /// Standard deviation of each current measurement [A].
    pub sigma_i_a: f64,
    /// Seed of the noise stream.
    pub seed: u64,
}

impl MeasurementNoise {
    pub fn validate(&self) -> Result<(), ModelError> {
        for (what, s) in [("sigma_v_v", self.sigma_v_v), ("sigma_i_a", self.sigma_i_a)] {
            if !(s.is_finite() && s >= 0.0) {
                return Err(ModelError::InvalidParameter(format!(
                    "{what} = {s} must be finite and ≥ 0"
                )));
            }
        }
        Ok(())
    }
}

/// Which controller closes the loop.
#[derive(Debug, Clone, PartialEq)]
pub enum ControllerSpec {
    /// Distributed adaptive controller ("c1").
    Adaptive(ControllerGains),
    /// Decentralized droop ("c2"). The four controller state blocks are
    /// frozen at their initial values.
    Droop(DroopGains),
    /// Consensus with an assumed resistance table ("c3"). Only `theta`
    /// evolves; `phi`, `rhat`, and `eta` stay frozen.
    ConsensusKnownR {
        gains: ControllerGains,
        assumed_r_ohm: Vec<f64>,
    },
}

impl ControllerSpec {
    /// Short tag used in output files: "c1", "c2", or "c3".
    pub fn label(&self) -> &'static str {
        match self {
            ControllerSpec::Adaptive(_) => "c1",
            ControllerSpec::Droop(_) => "c2",
            ControllerSpec::ConsensusKnownR { .. } => "c3",
        }
    }

    pub fn validate(&self, n_s: usize) -> Result<(), ModelError> {
        match self {
            ControllerSpec::Adaptive(g) => g.validate(n_s),
            ControllerSpec::Droop(g) => g.validate(n_s),
            ControllerSpec::ConsensusKnownR {
                gains,
                assumed_r_ohm,
            } => {
                gains.validate(n_s)?;
                if assumed_r_ohm.len() != n_s {
                    return Err(ModelError::LengthMismatch {
                        what: "assumed_r_ohm",
                        expected: n_s,
                        got: assumed_r_ohm.len(),
                    });
                }
                if let Some((i, &r)) = assumed_r_ohm
                    .iter()
                    .enumerate()
                    .find(|(_, r)| !(r.is_finite() && **r > 0.0))
                {
                    return Err(ModelError::InvalidParameter(format!(
                        "assumed_r_ohm[{i}] = {r} must be finite and > 0"
                    )));
                }
                Ok(())
            }
        }
    }
}

/// Full initial condition of a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InitialState {
    pub plant: PlantState,
    pub ctrl: AdaptiveCtrlState,
}

impl InitialState {
    pub fn new(plant: PlantState, ctrl: AdaptiveCtrlState) -> Self {
        InitialState { plant, ctrl }
    }

    /// De-energized lines, bus precharged to `v_dc_v`, all controller
    /// integrators at zero.
    pub fn cold(n_s: usize, v_dc_v: f64) -> Self {
        InitialState {
            plant: PlantState::at_rest(n_s, v_dc_v),
            ctrl: AdaptiveCtrlState::zeroed(n_s),
        }
    }

    pub fn validate(&self, n_s: usize) -> Result<(), ModelError> {
        if self.plant.i_tau_a.len() != n_s {
            return Err(ModelError::LengthMismatch {
                what: "initial i_tau_a",
                expected: n_s,
                got: self.plant.i_tau_a.len(),
            });
        }
        if !self.plant.v_dc_v.is_finite() || self.plant.i_tau_a.iter().any(|x| !x.is_finite()) {
            return Err(ModelError::NonFinite("initial plant state"));
        }
        self.ctrl.validate(n_s)
    }
}

// --- state packing -------------------------------------------------------

/// Index layout of the monolithic state vector (length `5 n_s + 1`).
#[derive(Debug, Clone, Copy)]
struct Layout {
    n: usize,
}

impl Layout {
    fn dim(self) -> usize {
        5 * self.n + 1
    }
    fn v(self) -> usize {
        self.n
    }
    fn phi(self, i: usize) -> usize {
        self.n + 1 + i
    }
    fn theta(self, i: usize) -> usize {
        2 * self.n + 1 + i
    }
    fn rhat(self, i: usize) -> usize {
        3 * self.n + 1 + i
    }
    fn eta(self, i: usize) -> usize {
        4 * self.n + 1 + i
    }
}

fn pack(x0: &InitialState, lay: Layout) -> Vec<f64> {
    let n = lay.n;
    let mut x = vec![0.0; lay.dim()];
    x[..n].copy_from_slice(&x0.plant.i_tau_a);
    x[lay.v()] = x0.plant.v_dc_v;
    x[lay.phi(0)..lay.phi(0) + n].copy_from_slice(&x0.ctrl.phi);
    x[lay.theta(0)..lay.theta(0) + n].copy_from_slice(&x0.ctrl.theta);
    x[lay.rhat(0)..lay.rhat(0) + n].copy_from_slice(&x0.ctrl.rhat_ohm);
    x[lay.eta(0)..lay.eta(0) + n].copy_from_slice(&x0.ctrl.eta);
    x
}

fn unpack(x: &[f64], lay: Layout) -> (PlantState, AdaptiveCtrlState) {
    let n = lay.n;
    (
        PlantState {
            i_tau_a: x[..n].to_vec(),
            v_dc_v: x[lay.v()],
        },
        AdaptiveCtrlState {
            phi: x[lay.phi(0)..lay.phi(0) + n].to_vec(),
            theta: x[lay.theta(0)..lay.theta(0) + n].to_vec(),
            rhat_ohm: x[lay.rhat(0)..lay.rhat(0) + n].to_vec(),
            eta: x[lay.eta(0)..lay.eta(0) + n].to_vec(),
        },
    )
}

// --- communication delay --------------------------------------------------

/// Zero-order-hold delay line for the communicated quantities: the broadcast
/// bus voltage plus every DGU's current measurement and consensus
/// coordinate.
///
/// `depth = ceil(delay_s / step_s)` steps (with a tiny tolerance so an exact
/// multiple does not round up); [`DelayBuffer::delayed`] returns the sample
/// pushed `depth` pushes ago, or the most recent push when `depth = 0`, which
/// makes the zero-delay case a bit-exact pass-through.
#[derive(Debug, Clone)]
pub struct DelayBuffer {
    n_s: usize,
    depth: usize,
    /// `depth + 1` rows of `[v | i_tau(n) | theta(n)]`.
    rows: Vec<f64>,
    wpos: usize,
}

/// Borrowed view of one delayed communication sample.
#[derive(Debug, Clone, Copy)]
pub struct DelayedComm<'a> {
    pub v_dc_v: f64,
    pub i_tau_a: &'a [f64],
    pub theta: &'a [f64],
}

impl DelayBuffer {
    /// Number of whole steps covering `delay_s`.
    pub fn steps_for(delay_s: f64, step_s: f64) -> usize {
        if delay_s <= 0.0 {
            0
        } else {
            // Tolerate representation error in the quotient so a delay that
            // is an exact multiple of the step does not gain a step.
            let ratio = delay_s / step_s;
            (ratio - 1e-9 * ratio.max(1.0)).ceil().max(1.0) as usize
        }
    }

    /// Buffer warm-filled with an initial sample: until `depth` pushes have
    /// happened, reads return that initial sample.
    pub fn new(
        delay_s: f64,
        step_s: f64,
        init_v: f64,
        init_i: &[f64],
        init_theta: &[f64],
    ) -> Result<Self, ModelError> {
        if !(delay_s.is_finite() && delay_s >= 0.0) {
            return Err(ModelError::InvalidParameter(format!(
                "delay_s = {delay_s} must be finite and ≥ 0"
            )));
        }
        if !(step_s.is_finite() && step_s > 0.0) {
            return Err(ModelError::InvalidParameter(format!(
                "step_s = {step_s} must be finite and > 0"
            )));
        }
        let n_s = init_i.len();
        if init_theta.len() != n_s {
            return Err(ModelError::LengthMismatch {
                what: "init_theta",
                expected: n_s,
                got: init_theta.len(),
            });
        }
        let depth = Self::steps_for(delay_s, step_s);
        let width = 2 * n_s + 1;
        let cap = depth + 1;
        let mut rows = vec![0.0; cap * width];
        for r in 0..cap {
            let row = &mut rows[r * width..(r + 1) * width];
            row[0] = init_v;
            row[1..1 + n_s].copy_from_slice(init_i);
            row[1 + n_s..].copy_from_slice(init_theta);
        }
        Ok(DelayBuffer {
            n_s,
            depth,
            rows,
            wpos: cap - 1,
        })
    }

    pub fn depth(&self) -> usize {
        self.depth
    }

    fn width(&self) -> usize {
        2 * self.n_s + 1
    }

    /// Store the sample measured now.
    pub fn push(&mut self, v_dc_v: f64, i_tau_a: &[f64], theta: &[f64]) {
        debug_assert_eq!(i_tau_a.len(), self.n_s);
        debug_assert_eq!(theta.len(), self.n_s);
        let cap = self.depth + 1;
        self.wpos = (self.wpos + 1) % cap;
        let w = self.width();
        let row = &mut self.rows[self.wpos * w..(self.wpos + 1) * w];
        row[0] = v_dc_v;
        row[1..1 + self.n_s].copy_from_slice(i_tau_a);
        row[1 + self.n_s..].copy_from_slice(theta);
    }

    /// The sample pushed `depth` pushes ago (zero-order hold); with
    /// `depth = 0`, the most recent push.
    pub fn delayed(&self) -> DelayedComm<'_> {
        let cap = self.depth + 1;
        let rpos = (self.wpos + 1) % cap;
        let w = self.width();
        let row = &self.rows[rpos * w..(rpos + 1) * w];
        DelayedComm {
            v_dc_v: row[0],
            i_tau_a: &row[1..1 + self.n_s],
            theta: &row[1 + self.n_s..],
        }
    }
}

/// Reusable buffers for assembling one DGU's [`NeighborView`].
#[derive(Debug, Default)]
pub struct NeighborScratch {
    i: Vec<f64>,
    th: Vec<f64>,
    w: Vec<f64>,
}

impl NeighborScratch {
    pub fn new() -> Self {
        Self::default()
    }

    fn fill_from(
        &mut self,
        neighbors: &[usize],
        i_all: &[f64],
        th_all: &[f64],
        w_all: &[f64],
    ) -> NeighborView<'_> {
        self.i.clear();
        self.th.clear();
        self.w.clear();
        for &j in neighbors {
            self.i.push(i_all[j]);
            self.th.push(th_all[j]);
            self.w.push(w_all[j]);
        }
        NeighborView {
            i_tau_a: &self.i,
            theta: &self.th,
            w: &self.w,
        }
    }
}

/// Assemble what DGU `i` receives over the network right now: its neighbors'
/// delayed current measurements and consensus coordinates with their sharing
/// weights.
pub fn delayed_view<'a>(
    buf: &DelayBuffer,
    graph: &CommGraph,
    w_all: &[f64],
    i: usize,
    scratch: &'a mut NeighborScratch,
) -> NeighborView<'a> {
    let d = buf.delayed();
    scratch.fill_from(graph.neighbors(i), d.i_tau_a, d.theta, w_all)
}

// --- right-hand side assembly ---------------------------------------------

struct RhsCtx<'a> {
    params: &'a PlantParams,
    ctrl: &'a ControllerSpec,
    graph: &'a CommGraph,
    lay: Layout,
    /// Active constant-current load [A].
    i_ell_a: f64,
    /// Per-step measurement noise, zero when noise is off.
    eps_v: f64,
    eps_i: &'a [f64],
}

/// Evaluate dx/dt at `x`. `comm` carries the frozen delayed communication
/// sample `(v, i_tau, theta)`; `None` means communication is instantaneous
/// and values are read live from `x`.
fn eval_rhs(
    ctx: &RhsCtx,
    x: &[f64],
    comm: Option<(f64, &[f64], &[f64])>,
    nb: &mut NeighborScratch,
    u: &mut [f64],
    dx: &mut [f64],
) {
    let lay = ctx.lay;
    let n = lay.n;
    let p = ctx.params;

    match ctx.ctrl {
        ControllerSpec::Adaptive(gains) => {
            for i in 0..n {
                let own = OwnMeasurements {
                    i_tau_a: x[i] + ctx.eps_i[i],
                    v_dc_v: match comm {
                        None => x[lay.v()] + ctx.eps_v,
                        Some((v, _, _)) => v,
                    },
                };
                let dgu = DguCtrlState {
                    phi: x[lay.phi(i)],
                    theta: x[lay.theta(i)],
                    rhat_ohm: x[lay.rhat(i)],
                    eta: x[lay.eta(i)],
                };
                let view = match comm {
                    None => {
                        // Live values; neighbor currents carry their own
                        // (per-step frozen) measurement noise.
                        nb.i.clear();
                        nb.th.clear();
                        nb.w.clear();
                        for &j in ctx.graph.neighbors(i) {
                            nb.i.push(x[j] + ctx.eps_i[j]);
                            nb.th.push(x[lay.theta(j)]);
                            nb.w.push(gains.w[j]);
                        }
                        NeighborView {
                            i_tau_a: &nb.i,
                            theta: &nb.th,
                            w: &nb.w,
                        }
                    }
                    Some((_, i_d, th_d)) => {
                        nb.fill_from(ctx.graph.neighbors(i), i_d, th_d, &gains.w)
                    }
                };
                let ev = c1_evaluate(gains, i, &dgu, &own, &view);
                u[i] = ev.u_v;
                dx[lay.phi(i)] = ev.deriv.dphi;
                dx[lay.theta(i)] = ev.deriv.dtheta;
                dx[lay.rhat(i)] = ev.deriv.drhat;
                dx[lay.eta(i)] = ev.deriv.deta;
            }
        }
        ControllerSpec::Droop(gains) => {
            for i in 0..n {
                u[i] = c2_droop(gains, i, x[i] + ctx.eps_i[i]);
                dx[lay.phi(i)] = 0.0;
                dx[lay.theta(i)] = 0.0;
                dx[lay.rhat(i)] = 0.0;
                dx[lay.eta(i)] = 0.0;
            }
        }
        ControllerSpec::ConsensusKnownR {
            gains,
            assumed_r_ohm,
        } => {
            for i in 0..n {
                let own = OwnMeasurements {
                    i_tau_a: x[i] + ctx.eps_i[i],
                    v_dc_v: match comm {
                        None => x[lay.v()] + ctx.eps_v,
                        Some((v, _, _)) => v,
                    },
                };
                let view = match comm {
                    None => {
                        nb.i.clear();
                        nb.th.clear();
                        nb.w.clear();
                        for &j in ctx.graph.neighbors(i) {
                            nb.i.push(x[j] + ctx.eps_i[j]);
                            nb.th.push(x[lay.theta(j)]);
                            nb.w.push(gains.w[j]);
                        }
                        NeighborView {
                            i_tau_a: &nb.i,
                            theta: &nb.th,
                            w: &nb.w,
                        }
                    }
                    Some((_, i_d, th_d)) => {
                        nb.fill_from(ctx.graph.neighbors(i), i_d, th_d, &gains.w)
                    }
                };
                let (u_i, dtheta) =
                    c3_evaluate(gains, assumed_r_ohm, i, x[lay.theta(i)], &own, &view);
                u[i] = u_i;
                dx[lay.phi(i)] = 0.0;
                dx[lay.theta(i)] = dtheta;
                dx[lay.rhat(i)] = 0.0;
                dx[lay.eta(i)] = 0.0;
            }
        }
    }

    // Plant rows use the true state, never the measured one.
    let v = x[lay.v()];
    let mut i_sum = 0.0;
    for i in 0..n {
        dx[i] = (-v - p.r_tau_ohm[i] * x[i] + u[i]) / p.l_tau_h[i];
        i_sum += x[i];
    }
    dx[lay.v()] = (i_sum - ctx.i_ell_a - p.y_siemens * v) / p.c_dc_f;
}

// --- the integrator --------------------------------------------------------

/// Integrate the closed loop over a load scenario.
///
/// The scenario supplies the piecewise-constant load (overriding
/// `params.i_ell_a`, which only matters for static analysis) and, if its
/// `y_pu` is set, the caller is expected to have already folded that into
/// `params.y_siemens` — the kernel does not silently rewrite parameters.
///
/// Samples are recorded every `record_every` steps starting at `t = 0`; the
/// exact final state is always stored on the trajectory. Fails with
/// [`SimError::Diverged`] the moment any state component stops being finite.
pub fn integrate(
    params: &PlantParams,
    graph: &CommGraph,
    controller: &ControllerSpec,
    scenario: &Scenario,
    cfg: &IntegratorConfig,
    x0: &InitialState,
    noise: Option<&MeasurementNoise>,
) -> Result<Trajectory, SimError> {
    params.validate()?;
    let n = params.n_s;
    if graph.n_s() != n {
        return Err(ModelError::LengthMismatch {
            what: "graph nodes",
            expected: n,
            got: graph.n_s(),
        }
        .into());
    }
    controller.validate(n)?;
    scenario.validate()?;
    cfg.validate()?;
    x0.validate(n)?;
    if let Some(nz) = noise {
        nz.validate()?;
    }
    if cfg.step_s > STEP_WARN_THRESHOLD_S {
        log::warn!(
            "integrator step {} s exceeds the recommended maximum {} s; fast bus dynamics may be under-resolved",
            cfg.step_s,
            STEP_WARN_THRESHOLD_S
        );
    }
    if let ControllerSpec::Adaptive(gains) = controller {
        let report = crate::controllers::verify_gains(gains, params)?;
        if !report.pass {
            log::warn!("adaptive-controller gain condition violated; run continues but convergence is not guaranteed");
        }
    }

    let h = cfg.step_s;
    let lay = Layout { n };
    let dim = lay.dim();

    // Steps per segment, then total steps (optionally capped by t_end_s).
    let seg_steps: Vec<usize> = scenario
        .segments
        .iter()
        .map(|s| (s.duration_s / h).round().max(1.0) as usize)
        .collect();
    let mut total_steps: usize = seg_steps.iter().sum();
    if let Some(t_end) = cfg.t_end_s {
        let cap = (t_end / h).round() as usize;
        if cap == 0 {
            return Err(ModelError::InvalidParameter(format!(
                "t_end_s = {t_end} is shorter than one step"
            ))
            .into());
        }
        total_steps = total_steps.min(cap);
    }
    let i_ell_by_segment: Vec<f64> = (0..scenario.segments.len())
        .map(|k| scenario.segment_i_ell_a(k))
        .collect();

    let mut x = pack(x0, lay);
    let mut k1 = vec![0.0; dim];
    let mut k2 = vec![0.0; dim];
    let mut k3 = vec![0.0; dim];
    let mut k4 = vec![0.0; dim];
    let mut xs = vec![0.0; dim];
    let mut u = vec![0.0; n];
    let mut nb = NeighborScratch::new();
    let mut eps_i = vec![0.0; n];
    let mut eps_v = 0.0;

    let depth = DelayBuffer::steps_for(graph.delay_s(), h);
    let mut buf = if depth > 0 {
        Some(DelayBuffer::new(
            graph.delay_s(),
            h,
            x0.plant.v_dc_v,
            &x0.plant.i_tau_a,
            &x0.ctrl.theta,
        )?)
    } else {
        None
    };
    // Owned copy of the frozen delayed sample for the current step.
    let mut comm_v = 0.0;
    let mut comm_i = vec![0.0; n];
    let mut comm_th = vec![0.0; n];

    let mut rng_state = noise.map(|nz| {
        (
            ChaCha8Rng::seed_from_u64(nz.seed),
            Normal::new(0.0, nz.sigma_v_v).expect("validated sigma"),
            Normal::new(0.0, nz.sigma_i_a).expect("validated sigma"),
        )
    });

    let mut samples: Vec<TrajectorySample> = Vec::with_capacity(total_steps / cfg.record_every + 2);

    // Per-step prologue shared by the main loop and the final sample: draw
    // this step's sensor noise and rotate the delay line.
    macro_rules! step_prologue {
        () => {{
            if let Some((rng, dist_v, dist_i)) = rng_state.as_mut() {
                eps_v = dist_v.sample(rng);
                for e in eps_i.iter_mut() {
                    *e = dist_i.sample(rng);
                }
            }
            if let Some(b) = buf.as_mut() {
                // Push the measurement taken now, then read the one from
                // `depth` steps back; own theta is exchanged as state, so it
                // is transmitted exactly.
                comm_v = x[lay.v()] + eps_v;
                for j in 0..n {
                    comm_i[j] = x[j] + eps_i[j];
                    comm_th[j] = x[lay.theta(j)];
                }
                b.push(comm_v, &comm_i, &comm_th);
                let d = b.delayed();
                comm_v = d.v_dc_v;
                comm_i.copy_from_slice(d.i_tau_a);
                comm_th.copy_from_slice(d.theta);
            }
        }};
    }

    let mut seg = 0usize;
    let mut steps_into_seg = 0usize;
    for k in 0..total_steps {
        // Advance the segment pointer; the boundary step already uses the
        // new segment's load.
        while seg + 1 < seg_steps.len() && steps_into_seg >= seg_steps[seg] {
            steps_into_seg = 0;
            seg += 1;
        }

        step_prologue!();
        let ctx = RhsCtx {
            params,
            ctrl: controller,
            graph,
            lay,
            i_ell_a: i_ell_by_segment[seg],
            eps_v,
            eps_i: &eps_i,
        };
        let comm = buf
            .as_ref()
            .map(|_| (comm_v, comm_i.as_slice(), comm_th.as_slice()));

        eval_rhs(&ctx, &x, comm, &mut nb, &mut u, &mut k1);
        if k % cfg.record_every == 0 {
            samples.push(make_sample(k as f64 * h, seg, &x, &u, lay));
        }

        match cfg.method {
            Method::Rk4 => {
                for j in 0..dim {
                    xs[j] = x[j] + 0.5 * h * k1[j];
                }
                eval_rhs(&ctx, &xs, comm, &mut nb, &mut u, &mut k2);
                for j in 0..dim {
                    xs[j] = x[j] + 0.5 * h * k2[j];
                }
                eval_rhs(&ctx, &xs, comm, &mut nb, &mut u, &mut k3);
                for j in 0..dim {
                    xs[j] = x[j] + h * k3[j];
                }
                eval_rhs(&ctx, &xs, comm, &mut nb, &mut u, &mut k4);
                let w6 = h / 6.0;
                for j in 0..dim {
                    x[j] += w6 * (k1[j] + 2.0 * (k2[j] + k3[j]) + k4[j]);
                }
            }
            Method::Euler => {
                for j in 0..dim {
                    x[j] += h * k1[j];
                }
            }
        }

        if x.iter().any(|v| !v.is_finite()) {
            return Err(SimError::Diverged {
                step: k,
                t_s: (k + 1) as f64 * h,
            });
        }
        steps_into_seg += 1;
    }

    // Control commands at the exact final state (one more evaluation, no
    // state update).
    step_prologue!();
    let ctx = RhsCtx {
        params,
        ctrl: controller,
        graph,
        lay,
        i_ell_a: i_ell_by_segment[seg],
        eps_v,
        eps_i: &eps_i,
    };
    let comm = buf
        .as_ref()
        .map(|_| (comm_v, comm_i.as_slice(), comm_th.as_slice()));
    eval_rhs(&ctx, &x, comm, &mut nb, &mut u, &mut k1);

    let final_t_s = total_steps as f64 * h;
    if total_steps % cfg.record_every == 0 {
        samples.push(make_sample(final_t_s, seg, &x, &u, lay));
    }
    let (final_plant, final_ctrl) = unpack(&x, lay);

    Ok(Trajectory {
        n_s: n,
        step_s: h,
        record_every: cfg.record_every,
        controller: controller.label().to_string(),
        samples,
        final_t_s,
        final_plant,
        final_ctrl,
        final_u_v: u.clone(),
    })
}

fn make_sample(t_s: f64, segment: usize, x: &[f64], u: &[f64], lay: Layout) -> TrajectorySample {
    let (plant, ctrl) = unpack(x, lay);
    TrajectorySample {
        t_s,
        segment,
        i_tau_a: plant.i_tau_a,
        v_dc_v: plant.v_dc_v,
        phi: ctrl.phi,
        theta: ctrl.theta,
        rhat_ohm: ctrl.rhat_ohm,
        eta: ctrl.eta,
        u_v: u.to_vec(),
    }
}
