//! Load scenarios, trajectory storage, and the comparison metrics.
//!
//! A [`Scenario`] is a piecewise-constant load profile given in per-unit
//! current on a chosen base, plus the voltage setpoint; the simulation
//! kernel turns it into a stepped constant-current draw on the bus. The
//! built-in profile mimics the load phases of a short regional flight
//! (high-load start, mid cruise, lighter final phase).
//!
//! A [`Trajectory`] stores decimated samples plus the exact final state, so
//! end-of-run numbers never depend on the recording stride.

use serde::{Deserialize, Serialize};

use crate::controllers::AdaptiveCtrlState;
use crate::error::ModelError;
use crate::plant::PlantState;

/// One constant-load phase.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LoadSegment {
    /// Phase length [s], > 0.
    pub duration_s: f64,
    /// Constant-current draw during the phase [pu on `i_base_a`].
    pub i_ell_pu: f64,
}

/// A piecewise-constant load profile with its per-unit bases.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub segments: Vec<LoadSegment>,
    /// Voltage base [V] for per-unit conversions.
    pub v_base_v: f64,
    /// Current base [A] for per-unit conversions.
    pub i_base_a: f64,
    /// Bus voltage setpoint [V] the controllers should hold.
    pub v_dc_star_v: f64,
    /// Optional load admittance [pu]; when present it overrides the plant's
    /// `y_siemens` after conversion (see [`Scenario::y_siemens`]).
    pub y_pu: Option<f64>,
}

impl Scenario {
    /// Three-phase regional-flight load profile on a 200 V / 6.7 A base:
    /// 35 s at 2.98 pu, 25 s at 2.3 pu, 25 s at 1.7 pu.
    pub fn builtin_regional_profile() -> Self {
        Scenario {
            segments: vec![
                LoadSegment {
                    duration_s: 35.0,
                    i_ell_pu: 2.98,
                },
                LoadSegment {
                    duration_s: 25.0,
                    i_ell_pu: 2.3,
                },
                LoadSegment {
                    duration_s: 25.0,
                    i_ell_pu: 1.7,
                },
            ],
            v_base_v: 200.0,
            i_base_a: 6.7,
            v_dc_star_v: 200.0,
            y_pu: None,
        }
    }

    /// A single constant-load phase on the same bases as the built-in
    /// profile. Handy for startup and estimation experiments.
    pub fn single_segment(duration_s: f64, i_ell_pu: f64) -> Self {
        Scenario {
            segments: vec![LoadSegment {
                duration_s,
                i_ell_pu,
            }],
            ..Self::builtin_regional_profile()
        }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        if self.segments.is_empty() {
            return Err(ModelError::InvalidParameter(
                "scenario needs at least one segment".into(),
            ));
        }
        for (k, seg) in self.segments.iter().enumerate() {
            if !(seg.duration_s.is_finite() && seg.duration_s > 0.0) {
                return Err(ModelError::InvalidParameter(format!(
                    "segments[{k}].duration_s = {} must be finite and > 0",
                    seg.duration_s
                )));
            }
            if !seg.i_ell_pu.is_finite() || seg.i_ell_pu < 0.0 {
                return Err(ModelError::InvalidParameter(format!(
                    "segments[{k}].i_ell_pu = {} must be finite and ≥ 0",
                    seg.i_ell_pu
                )));
            }
        }
        for (what, x) in [
            ("v_base_v", self.v_base_v),
            ("i_base_a", self.i_base_a),
            ("v_dc_star_v", self.v_dc_star_v),
        ] {
            if !(x.is_finite() && x > 0.0) {
                return Err(ModelError::InvalidParameter(format!(
                    "{what} = {x} must be finite and > 0"
                )));
            }
        }
        if let Some(y) = self.y_pu {
            if !(y.is_finite() && y >= 0.0) {
                return Err(ModelError::InvalidParameter(format!(
                    "y_pu = {y} must be finite and ≥ 0"
                )));
            }
        }
        Ok(())
    }

    /// Load current of segment `k` [A].
    pub fn segment_i_ell_a(&self, k: usize) -> f64 {
        pu_to_amps(self.segments[k].i_ell_pu, self.i_base_a)
    }

    /// Load admittance in SI units [S], if given in per-unit.
    pub fn y_siemens(&self) -> Option<f64> {
        self.y_pu.map(|y| y * self.i_base_a / self.v_base_v)
    }

    pub fn total_duration_s(&self) -> f64 {
        self.segments.iter().map(|s| s.duration_s).sum()
    }
}

/// Per-unit current to amperes.
pub fn pu_to_amps(i_pu: f64, i_base_a: f64) -> f64 {
    i_pu * i_base_a
}

/// Amperes to per-unit current.
pub fn amps_to_pu(i_a: f64, i_base_a: f64) -> f64 {
    i_a / i_base_a
}

/// One recorded point of a simulation run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectorySample {
    /// Sample time [s].
    pub t_s: f64,
    /// Index of the load segment active at `t_s`.
    pub segment: usize,
    /// Line currents [A].
    pub i_tau_a: Vec<f64>,
    /// Bus voltage [V].
    pub v_dc_v: f64,
    /// Controller states (zero-frozen where a controller has none).
    pub phi: Vec<f64>,
    pub theta: Vec<f64>,
    pub rhat_ohm: Vec<f64>,
    pub eta: Vec<f64>,
    /// Source voltage commands [V].
    pub u_v: Vec<f64>,
}

/// A recorded simulation run: decimated samples plus the exact end state.
///
/// Samples sit on a uniform grid `t_k = k · record_every · step_s` starting
/// at 0; the final integrator state is stored separately (`final_*`) so it is
/// exact even when the total step count is not a multiple of the stride.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub n_s: usize,
    /// Integrator step [s] that produced this run.
    pub step_s: f64,
    /// Recording stride in steps.
    pub record_every: usize,
    /// Which controller produced the run ("c1", "c2", or "c3").
    pub controller: String,
    pub samples: Vec<TrajectorySample>,
    /// Time of the exact final state [s].
    pub final_t_s: f64,
    pub final_plant: PlantState,
    pub final_ctrl: AdaptiveCtrlState,
    /// Control commands at the final state [V].
    pub final_u_v: Vec<f64>,
}

impl Trajectory {
    /// Last recorded sample inside segment `k`, if the segment was reached.
    pub fn last_sample_in_segment(&self, k: usize) -> Option<&TrajectorySample> {
        self.samples.iter().rev().find(|s| s.segment == k)
    }
}

/// Per-sample bus-voltage deviation from the setpoint [% of setpoint].
pub fn voltage_deviation_pct(traj: &Trajectory, v_dc_star_v: f64) -> Vec<f64> {
    traj.samples
        .iter()
        .map(|s| 100.0 * (s.v_dc_v - v_dc_star_v).abs() / v_dc_star_v)
        .collect()
}

/// Per-sample current-sharing error: the 2-norm of all pairwise
/// weighted-current gaps, `sqrt(Σ_{i<j} (w_i I_i - w_j I_j)²)` [A].
///
/// Zero exactly when every weighted current agrees, i.e. when currents are
/// shared proportionally to `1/w`.
pub fn current_sharing_error(traj: &Trajectory, w: &[f64]) -> Vec<f64> {
    traj.samples
        .iter()
        .map(|s| pairwise_weighted_norm(&s.i_tau_a, w))
        .collect()
}

/// 2-norm of the stacked pairwise weighted-current gaps of one sample [A].
pub fn pairwise_weighted_norm(i_tau_a: &[f64], w: &[f64]) -> f64 {
    let n = i_tau_a.len();
    let mut acc = 0.0;
    for i in 0..n {
        for j in (i + 1)..n {
            let gap = w[i] * i_tau_a[i] - w[j] * i_tau_a[j];
            acc += gap * gap;
        }
    }
    acc.sqrt()
}

/// Largest pairwise weighted-current gap of one sample [A].
pub fn max_pairwise_weighted_gap(i_tau_a: &[f64], w: &[f64]) -> f64 {
    let n = i_tau_a.len();
    let mut max = 0.0f64;
    for i in 0..n {
        for j in (i + 1)..n {
            max = max.max((w[i] * i_tau_a[i] - w[j] * i_tau_a[j]).abs());
        }
    }
    max
}

/// Mean of the weighted currents of one sample [A].
pub fn mean_weighted_current(i_tau_a: &[f64], w: &[f64]) -> f64 {
    let n = i_tau_a.len();
    i_tau_a
        .iter()
        .zip(w)
        .map(|(i, w)| w * i)
        .sum::<f64>()
        / n as f64
}

/// Per-sample, per-line signed resistance-estimate error
/// [% of the true resistance].
pub fn resistance_estimation_error(traj: &Trajectory, r_tau_ohm: &[f64]) -> Vec<Vec<f64>> {
    traj.samples
        .iter()
        .map(|s| {
            s.rhat_ohm
                .iter()
                .zip(r_tau_ohm)
                .map(|(rh, r)| 100.0 * (rh - r) / r)
                .collect()
        })
        .collect()
}
