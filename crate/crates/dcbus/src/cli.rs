//! The three user-facing operations behind the `dcbus` binary: `simulate`,
//! `verify`, and `compare`. Each is an ordinary library function returning a
//! report struct; the binary only formats reports and maps them to exit
//! codes.
//!
//! Exit-code contract (kept by [`CliError::exit_code`] and the report
//! `pass` flags):
//!
//! * `0` — success, all checks passed
//! * `1` — ran to completion but a check failed (or an output file could
//!   not be written)
//! * `2` — configuration rejected
//! * `3` — numerical failure (state diverged / stopped being finite)

use std::io::Write as _;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::analysis::{
    check_invariant_set, closed_loop_rhs_scaled, compute_equilibrium, equilibrium_residual,
    lyapunov_s_dot, ph_form_check, ClosedLoopState, EquilibriumPoint,
};
use crate::config::{ConfigError, RunConfig, SCHEMA_VERSION};
use crate::controllers::{verify_gains, ControllerGains};
use crate::error::{ModelError, SimError};
use crate::plant::PlantParams;
use crate::scenario::{
    max_pairwise_weighted_gap, mean_weighted_current, pairwise_weighted_norm, Trajectory,
};
use crate::simkernel::integrate;

pub const EXIT_OK: i32 = 0;
pub const EXIT_CHECK_FAILED: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_NUMERICAL: i32 = 3;

/// Voltage band used for "regulated" claims and settle times [% of setpoint].
pub const V_SETTLE_BAND_PCT: f64 = 0.5;

/// Relative tolerance for the port-Hamiltonian residual and the dual-path
/// energy-rate agreement.
pub const STRUCTURE_TOL_REL: f64 = 1e-9;

/// Absolute-ish bound factor for the equilibrium residual:
/// `residual ≤ 1e-10 · (1 + ‖x̄‖_∞)`.
pub const EQUILIBRIUM_TOL: f64 = 1e-10;

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("numerical failure: {0}")]
    Numerical(SimError),
    #[error("cannot write {path}: {source}")]
    Output {
        path: String,
        #[source]
        source: std::io::Error,
    },
    /// An artifact this command just wrote failed its own re-validation;
    /// indicates a bug, not a user error.
    #[error("self-check failed: {0}")]
    SelfCheck(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => EXIT_CONFIG,
            CliError::Numerical(_) => EXIT_NUMERICAL,
            CliError::Output { .. } | CliError::SelfCheck(_) => EXIT_CHECK_FAILED,
        }
    }
}

impl From<SimError> for CliError {
    fn from(e: SimError) -> Self {
        match e {
            SimError::Diverged { .. } => CliError::Numerical(e),
            SimError::Model(m) => CliError::Config(m.into()),
        }
    }
}

impl From<ModelError> for CliError {
    fn from(e: ModelError) -> Self {
        CliError::Config(e.into())
    }
}

fn out_file(dir: &Path, name: &str) -> PathBuf {
    dir.join(name)
}

fn write_text(path: &Path, text: &str) -> Result<(), CliError> {
    let mk_err = |source| CliError::Output {
        path: path.display().to_string(),
        source,
    };
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(mk_err)?;
    }
    let mut f = std::fs::File::create(path).map_err(mk_err)?;
    f.write_all(text.as_bytes()).map_err(mk_err)
}

// --- trajectory / metrics CSV ----------------------------------------------

/// Column header of a trajectory CSV for `n_s` sources. Stable schema:
/// time, bus voltage, then the per-DGU blocks in state order, 1-based.
pub fn trajectory_csv_header(n_s: usize) -> String {
    let mut cols = vec!["t_s".to_string(), "V_dc_V".to_string()];
    let block = |prefix: &str, suffix: &str| {
        (1..=n_s)
            .map(|i| format!("{prefix}{i}{suffix}"))
            .collect::<Vec<_>>()
    };
    cols.extend(block("I_tau_", "_A"));
    cols.extend(block("phi_", ""));
    cols.extend(block("theta_", ""));
    cols.extend(block("rhat_", "_ohm"));
    cols.extend(block("eta_", ""));
    cols.extend(block("u_", "_V"));
    cols.join(",")
}

/// Render a trajectory as CSV (shortest round-trip float formatting, so
/// files are bit-stable across identical runs).
pub fn trajectory_to_csv(traj: &Trajectory) -> String {
    let mut out = String::with_capacity(64 * (traj.samples.len() + 1));
    out.push_str(&trajectory_csv_header(traj.n_s));
    out.push('\n');
    let push_block = |out: &mut String, v: &[f64]| {
        for x in v {
            out.push(',');
            out.push_str(&format!("{x}"));
        }
    };
    for s in &traj.samples {
        out.push_str(&format!("{}", s.t_s));
        out.push(',');
        out.push_str(&format!("{}", s.v_dc_v));
        push_block(&mut out, &s.i_tau_a);
        push_block(&mut out, &s.phi);
        push_block(&mut out, &s.theta);
        push_block(&mut out, &s.rhat_ohm);
        push_block(&mut out, &s.eta);
        push_block(&mut out, &s.u_v);
        out.push('\n');
    }
    out
}

pub const METRICS_CSV_HEADER: &str =
    "t_s,segment,v_dev_pct,sharing_err_a,max_weighted_gap_a,rhat_err_max_pct";

/// Per-sample metric rows for a run.
pub fn metrics_to_csv(traj: &Trajectory, params: &PlantParams, gains: &ControllerGains) -> String {
    let mut out = String::with_capacity(48 * (traj.samples.len() + 1));
    out.push_str(METRICS_CSV_HEADER);
    out.push('\n');
    for s in &traj.samples {
        let v_dev = 100.0 * (s.v_dc_v - gains.v_dc_star_v).abs() / gains.v_dc_star_v;
        let sharing = pairwise_weighted_norm(&s.i_tau_a, &gains.w);
        let gap = max_pairwise_weighted_gap(&s.i_tau_a, &gains.w);
        let rhat_err = s
            .rhat_ohm
            .iter()
            .zip(&params.r_tau_ohm)
            .map(|(rh, r)| (100.0 * (rh - r) / r).abs())
            .fold(0.0f64, f64::max);
        out.push_str(&format!(
            "{},{},{},{},{},{}\n",
            s.t_s, s.segment, v_dev, sharing, gap, rhat_err
        ));
    }
    out
}

// --- simulate ---------------------------------------------------------------

/// Per-segment steady-state numbers, taken at the last recorded sample of
/// the segment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegmentSummary {
    pub segment: usize,
    /// Time of the segment's last recorded sample [s].
    pub t_end_s: f64,
    /// Load during the segment [A].
    pub i_ell_a: f64,
    pub v_dc_end_v: f64,
    pub v_dev_end_pct: f64,
    /// First time after segment start from which the voltage stays inside
    /// the ±0.5% band; `None` if it never settles within the segment.
    pub settle_time_s: Option<f64>,
    pub sharing_err_end_a: f64,
    pub max_weighted_gap_end_a: f64,
    /// Signed per-line resistance-estimate errors at segment end [%].
    pub rhat_err_end_pct: Vec<f64>,
}

/// Everything `simulate` writes into `summary.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulateSummary {
    pub schema_version: u32,
    pub controller: String,
    pub n_s: usize,
    pub t_end_s: f64,
    pub samples: usize,
    pub segments: Vec<SegmentSummary>,
    /// Conserved consensus quantity at t = 0 and its worst drift.
    pub invariant_initial: f64,
    pub invariant_max_abs_drift: f64,
    pub final_v_dc_v: f64,
    pub final_i_tau_a: Vec<f64>,
    pub final_rhat_ohm: Vec<f64>,
    /// Exact copy of the configuration that produced the run.
    pub config: RunConfig,
}

impl SimulateSummary {
    /// Schema self-validation; used on every summary this tool writes and on
    /// any summary it reads back.
    pub fn validate(&self) -> Result<(), String> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(format!(
                "summary schema_version {} does not match {}",
                self.schema_version, SCHEMA_VERSION
            ));
        }
        if !["c1", "c2", "c3"].contains(&self.controller.as_str()) {
            return Err(format!("unknown controller tag {:?}", self.controller));
        }
        if self.final_i_tau_a.len() != self.n_s || self.final_rhat_ohm.len() != self.n_s {
            return Err("final state length disagrees with n_s".into());
        }
        let finite = |x: f64| x.is_finite();
        if !finite(self.t_end_s)
            || !finite(self.final_v_dc_v)
            || !self.final_i_tau_a.iter().copied().all(finite)
            || !self.final_rhat_ohm.iter().copied().all(finite)
            || !finite(self.invariant_initial)
            || !finite(self.invariant_max_abs_drift)
        {
            return Err("summary contains non-finite values".into());
        }
        for seg in &self.segments {
            if !finite(seg.v_dc_end_v) || !finite(seg.v_dev_end_pct) {
                return Err(format!("segment {} contains non-finite values", seg.segment));
            }
        }
        self.config.validate().map_err(|e| e.to_string())
    }

    pub fn from_json(text: &str) -> Result<Self, String> {
        let s: SimulateSummary = serde_json::from_str(text).map_err(|e| e.to_string())?;
        s.validate()?;
        Ok(s)
    }
}

fn segment_summaries(
    traj: &Trajectory,
    params: &PlantParams,
    gains: &ControllerGains,
    i_ell_by_segment: &[f64],
) -> Vec<SegmentSummary> {
    let v_star = gains.v_dc_star_v;
    let n_segments = traj
        .samples
        .iter()
        .map(|s| s.segment + 1)
        .max()
        .unwrap_or(0);
    (0..n_segments)
        .map(|k| {
            let in_seg: Vec<_> = traj.samples.iter().filter(|s| s.segment == k).collect();
            let first_t = in_seg.first().map(|s| s.t_s).unwrap_or(0.0);
            let last = in_seg.last().expect("segment has samples");
            // Settle time: the sample after the last band breach.
            let mut last_breach: Option<usize> = None;
            for (idx, s) in in_seg.iter().enumerate() {
                let dev = 100.0 * (s.v_dc_v - v_star).abs() / v_star;
                if dev > V_SETTLE_BAND_PCT {
                    last_breach = Some(idx);
                }
            }
            let settle_time_s = match last_breach {
                None => Some(0.0),
                Some(idx) if idx + 1 < in_seg.len() => Some(in_seg[idx + 1].t_s - first_t),
                Some(_) => None,
            };
            SegmentSummary {
                segment: k,
                t_end_s: last.t_s,
                i_ell_a: i_ell_by_segment.get(k).copied().unwrap_or(f64::NAN),
                v_dc_end_v: last.v_dc_v,
                v_dev_end_pct: 100.0 * (last.v_dc_v - v_star).abs() / v_star,
                settle_time_s,
                sharing_err_end_a: pairwise_weighted_norm(&last.i_tau_a, &gains.w),
                max_weighted_gap_end_a: max_pairwise_weighted_gap(&last.i_tau_a, &gains.w),
                rhat_err_end_pct: last
                    .rhat_ohm
                    .iter()
                    .zip(&params.r_tau_ohm)
                    .map(|(rh, r)| 100.0 * (rh - r) / r)
                    .collect(),
            }
        })
        .collect()
}

/// Run one controller over the configured scenario and write
/// `trajectory_<tag>.csv`, `metrics_<tag>.csv`, and `summary_<tag>.json`
/// into the output directory.
pub fn cmd_simulate(
    config_path: &Path,
    controller_tag: &str,
    out_dir: Option<&Path>,
) -> Result<SimulateSummary, CliError> {
    let cfg = RunConfig::load(config_path)?;
    let params = cfg.effective_params()?;
    let graph = cfg.comm_graph()?;
    let controller = cfg.controller(controller_tag)?;
    let x0 = cfg.initial_state()?;

    let traj = integrate(
        &params,
        &graph,
        &controller,
        &cfg.scenario,
        &cfg.integrator,
        &x0,
        cfg.noise.as_ref(),
    )?;

    let i_ell_by_segment: Vec<f64> = (0..cfg.scenario.segments.len())
        .map(|k| cfg.scenario.segment_i_ell_a(k))
        .collect();
    let drift = check_invariant_set(&traj, &cfg.gains)?;
    let summary = SimulateSummary {
        schema_version: SCHEMA_VERSION,
        controller: controller.label().to_string(),
        n_s: params.n_s,
        t_end_s: traj.final_t_s,
        samples: traj.samples.len(),
        segments: segment_summaries(&traj, &params, &cfg.gains, &i_ell_by_segment),
        invariant_initial: drift.initial,
        invariant_max_abs_drift: drift.max_abs_drift,
        final_v_dc_v: traj.final_plant.v_dc_v,
        final_i_tau_a: traj.final_plant.i_tau_a.clone(),
        final_rhat_ohm: traj.final_ctrl.rhat_ohm.clone(),
        config: cfg.clone(),
    };

    let dir = out_dir
        .map(Path::to_path_buf)
        .unwrap_or_else(|| PathBuf::from(&cfg.output.dir));
    let tag = controller.label();
    write_text(
        &out_file(&dir, &format!("trajectory_{tag}.csv")),
        &trajectory_to_csv(&traj),
    )?;
    write_text(
        &out_file(&dir, &format!("metrics_{tag}.csv")),
        &metrics_to_csv(&traj, &params, &cfg.gains),
    )?;
    let json = serde_json::to_string_pretty(&summary)
        .map_err(|e| CliError::SelfCheck(format!("summary serialization failed: {e}")))?;
    let summary_path = out_file(&dir, &format!("summary_{tag}.json"));
    write_text(&summary_path, &json)?;

    // Round-trip what was just written through the schema validator: if this
    // file cannot be read back, fail loudly now rather than downstream.
    let reread = std::fs::read_to_string(&summary_path).map_err(|source| CliError::Output {
        path: summary_path.display().to_string(),
        source,
    })?;
    SimulateSummary::from_json(&reread).map_err(CliError::SelfCheck)?;

    Ok(summary)
}

// --- verify ------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VerifyRow {
    pub check: String,
    pub pass: bool,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VerifyReport {
    pub rows: Vec<VerifyRow>,
    pub pass: bool,
}

/// Draw a state in a box around the equilibrium, with block-appropriate
/// spreads (the `eta` spread is small because its energy weight is huge).
fn sample_state(rng: &mut ChaCha8Rng, eq: &EquilibriumPoint) -> ClosedLoopState {
    let n = eq.phi.len();
    let mut draw = |spread: f64| rng.gen_range(-spread..spread);
    ClosedLoopState {
        z: (0..n).map(|_| draw(2.0)).collect(),
        v_dc_v: eq.v_dc_v + draw(10.0),
        phi: eq.phi.iter().map(|p| p + draw(2.0)).collect(),
        theta: (0..n).map(|_| draw(2.0)).collect(),
        rhat_ohm: eq.rhat_ohm.iter().map(|r| r + draw(0.5)).collect(),
        eta: eq.eta.iter().map(|l| l + draw(2e-3)).collect(),
    }
}

/// Static verification of a configuration: the gain condition, the
/// equilibrium residual, the port-Hamiltonian structure, the dual-path
/// energy rate, and the consensus conservation law, plus a damping note.
pub fn cmd_verify(config_path: &Path) -> Result<VerifyReport, CliError> {
    let cfg = RunConfig::load(config_path)?;
    let params = cfg.effective_params()?;
    let gains = &cfg.gains;
    let graph = cfg.comm_graph()?;
    let mut rows = Vec::new();

    // 1. Gain condition, one row per DGU.
    let gain_report = verify_gains(gains, &params)?;
    for r in &gain_report.rows {
        rows.push(VerifyRow {
            check: format!("gain condition (dgu {})", r.dgu),
            pass: r.ok,
            detail: format!(
                "t_phi = {} vs inductance spread {} (margin {:+.3e})",
                r.t_phi, r.l_spread_h, r.margin
            ),
        });
    }

    // 2. Equilibrium residual.
    let eq = compute_equilibrium(&params, gains, &vec![0.0; params.n_s])?;
    let residual = equilibrium_residual(&params, gains, &graph, &eq)?;
    let x_inf = eq
        .phi
        .iter()
        .chain(eq.theta.iter())
        .chain(eq.rhat_ohm.iter())
        .chain(eq.eta.iter())
        .fold(eq.v_dc_v.abs(), |m, x| m.max(x.abs()));
    let bound = EQUILIBRIUM_TOL * (1.0 + x_inf);
    rows.push(VerifyRow {
        check: "equilibrium residual".into(),
        pass: residual <= bound,
        detail: format!("max |dx/dt| = {residual:.3e} at the computed equilibrium (bound {bound:.3e})"),
    });

    // 3. Port-Hamiltonian structure at random states.
    let mut rng = ChaCha8Rng::seed_from_u64(0x0dc_b05);
    let mut worst_rel = 0.0f64;
    let mut worst_skew = 0.0f64;
    let mut r_ok = true;
    for _ in 0..100 {
        let state = sample_state(&mut rng, &eq);
        let check = ph_form_check(&params, gains, &graph, &state)?;
        worst_rel = worst_rel.max(check.residual_inf / check.scale);
        worst_skew = worst_skew.max(check.skew_residual_inf);
        r_ok &= check.r_min_diag >= 0.0;
    }
    rows.push(VerifyRow {
        check: "port-Hamiltonian structure (100 random states)".into(),
        pass: worst_rel <= STRUCTURE_TOL_REL && worst_skew == 0.0 && r_ok,
        detail: format!(
            "worst relative residual {worst_rel:.3e} (tol {STRUCTURE_TOL_REL:.0e}), skew residual {worst_skew:.1e}, R ⪰ 0: {r_ok}"
        ),
    });

    // 4. Energy rate: closed form vs chain rule at random states.
    let mut worst_sdot = 0.0f64;
    for _ in 0..1000 {
        let state = sample_state(&mut rng, &eq);
        let sd = lyapunov_s_dot(&params, gains, &graph, &state, &eq)?;
        let denom = 1.0 + sd.analytic.abs().max(sd.chain_rule.abs());
        worst_sdot = worst_sdot.max((sd.analytic - sd.chain_rule).abs() / denom);
    }
    rows.push(VerifyRow {
        check: "energy rate, closed form vs chain rule (1000 random states)".into(),
        pass: worst_sdot <= STRUCTURE_TOL_REL,
        detail: format!("worst relative disagreement {worst_sdot:.3e} (tol {STRUCTURE_TOL_REL:.0e})"),
    });

    // 5. Consensus conservation: Σ t_theta,i dtheta_i/dt vanishes.
    let mut worst_cons = 0.0f64;
    for _ in 0..100 {
        let state = sample_state(&mut rng, &eq);
        let scaled = closed_loop_rhs_scaled(&params, gains, &graph, &state)?;
        let sum: f64 = scaled.t_theta_dtheta.iter().sum();
        let scale: f64 = 1.0 + scaled.t_theta_dtheta.iter().map(|x| x.abs()).sum::<f64>();
        worst_cons = worst_cons.max(sum.abs() / scale);
    }
    rows.push(VerifyRow {
        check: "consensus weighted-sum conservation (100 random states)".into(),
        pass: worst_cons <= 1e-13,
        detail: format!("worst |Σ t_theta dtheta/dt| / scale = {worst_cons:.3e} (tol 1e-13)"),
    });

    // 6. Damping note: Y = 0 keeps the equilibrium but removes strict decay
    // of the bus-voltage error.
    rows.push(VerifyRow {
        check: "bus damping".into(),
        pass: true,
        detail: if params.y_siemens > 0.0 {
            format!("Y = {} S > 0: bus-voltage error strictly damped", params.y_siemens)
        } else {
            "Y = 0: voltage error not strictly damped (allowed, flagged)".into()
        },
    });

    let pass = rows.iter().all(|r| r.pass);
    Ok(VerifyReport { rows, pass })
}

// --- compare ------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompareRow {
    pub controller: String,
    pub v_dc_end_v: f64,
    pub v_dev_end_pct: f64,
    pub sharing_err_end_a: f64,
    pub max_weighted_gap_end_a: f64,
    pub i_tau_end_a: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompareReport {
    pub schema_version: u32,
    /// Rows in fixed order c1, c2, c3.
    pub rows: Vec<CompareRow>,
    /// Adaptive beats known-R consensus beats droop on final voltage
    /// deviation.
    pub voltage_ordering_ok: bool,
    /// Sharing-error floor used for the ratio [A]: 1% of the mean weighted
    /// current under c1.
    pub sharing_floor_a: f64,
    /// Floored sharing-error ratio c3 / c1; both controllers share well, so
    /// this should stay within a band around 1 rather than diverge.
    pub sharing_ratio_c3_over_c1: f64,
    pub sharing_ratio_ok: bool,
    pub pass: bool,
}

/// Run all three controllers concurrently on the same scenario and initial
/// state, write per-controller metrics CSVs plus `compare_summary.json`, and
/// check the expected performance ordering.
pub fn cmd_compare(config_path: &Path, out_dir: Option<&Path>) -> Result<CompareReport, CliError> {
    let cfg = RunConfig::load(config_path)?;
    let params = cfg.effective_params()?;
    let graph = cfg.comm_graph()?;
    let x0 = cfg.initial_state()?;
    let controllers = [
        cfg.controller("c1")?,
        cfg.controller("c2")?,
        cfg.controller("c3")?,
    ];

    let mut results: Vec<Option<Result<Trajectory, SimError>>> = vec![None, None, None];
    std::thread::scope(|scope| {
        let mut handles = Vec::new();
        for ctrl in &controllers {
            let params = &params;
            let graph = &graph;
            let cfg = &cfg;
            let x0 = &x0;
            handles.push(scope.spawn(move || {
                integrate(
                    params,
                    graph,
                    ctrl,
                    &cfg.scenario,
                    &cfg.integrator,
                    x0,
                    cfg.noise.as_ref(),
                )
            }));
        }
        for (slot, handle) in results.iter_mut().zip(handles) {
            *slot = Some(handle.join().expect("simulation thread panicked"));
        }
    });

    let mut trajs = Vec::with_capacity(3);
    for r in results {
        trajs.push(r.expect("all slots filled")?);
    }

    let dir = out_dir
        .map(Path::to_path_buf)
        .unwrap_or_else(|| PathBuf::from(&cfg.output.dir));
    let mut rows = Vec::with_capacity(3);
    for traj in &trajs {
        write_text(
            &out_file(&dir, &format!("metrics_{}.csv", traj.controller)),
            &metrics_to_csv(traj, &params, &cfg.gains),
        )?;
        let end = &traj.final_plant;
        rows.push(CompareRow {
            controller: traj.controller.clone(),
            v_dc_end_v: end.v_dc_v,
            v_dev_end_pct: 100.0 * (end.v_dc_v - cfg.gains.v_dc_star_v).abs()
                / cfg.gains.v_dc_star_v,
            sharing_err_end_a: pairwise_weighted_norm(&end.i_tau_a, &cfg.gains.w),
            max_weighted_gap_end_a: max_pairwise_weighted_gap(&end.i_tau_a, &cfg.gains.w),
            i_tau_end_a: end.i_tau_a.clone(),
        });
    }

    let (c1, c2, c3) = (&rows[0], &rows[1], &rows[2]);
    let voltage_ordering_ok =
        c1.v_dev_end_pct < c3.v_dev_end_pct && c3.v_dev_end_pct < c2.v_dev_end_pct;
    // Both c1 and c3 drive the sharing error toward zero; comparing raw
    // near-zero numbers is noise, so both are floored at 1% of the mean
    // weighted current before taking the ratio.
    let floor = 0.01
        * mean_weighted_current(&trajs[0].final_plant.i_tau_a, &cfg.gains.w)
            .abs();
    let ratio = c3.sharing_err_end_a.max(floor) / c1.sharing_err_end_a.max(floor).max(f64::MIN_POSITIVE);
    let sharing_ratio_ok = (0.2..=5.0).contains(&ratio);

    let report = CompareReport {
        schema_version: SCHEMA_VERSION,
        rows,
        voltage_ordering_ok,
        sharing_floor_a: floor,
        sharing_ratio_c3_over_c1: ratio,
        sharing_ratio_ok,
        pass: voltage_ordering_ok && sharing_ratio_ok,
    };
    let json = serde_json::to_string_pretty(&report)
        .map_err(|e| CliError::SelfCheck(format!("compare summary serialization failed: {e}")))?;
    write_text(&out_file(&dir, "compare_summary.json"), &json)?;
    Ok(report)
}
