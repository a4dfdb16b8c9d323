//! Run configuration: one TOML file describes the plant, all three
//! controllers, the communication graph, the load scenario, and the
//! integrator.
//!
//! Every physical key carries its unit in the name (`_h`, `_ohm`, `_f`,
//! `_v`, `_a`, `_s`, `_siemens`, `_pu`) so a config can be audited without
//! opening the source, and loading performs cross-field validation — lengths
//! must agree, setpoints stated in several places must be identical, unknown
//! keys are rejected. A rejected config is a usage error, never a panic.

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::analysis::compute_equilibrium;
use crate::controllers::{ControllerGains, DroopGains};
use crate::error::ModelError;
use crate::plant::PlantParams;
use crate::scenario::Scenario;
use crate::simkernel::{
    CommGraph, ControllerSpec, InitialState, IntegratorConfig, MeasurementNoise,
};

/// Version of the config schema this build reads and writes.
pub const SCHEMA_VERSION: u32 = 1;

/// Why a configuration was rejected.
#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    /// TOML syntax or type error; the message includes line/column.
    #[error("parse error in {path}:\n{source}")]
    Parse {
        path: String,
        #[source]
        source: Box<toml::de::Error>,
    },
    #[error("invalid configuration: {0}")]
    Invalid(String),
}

impl From<ModelError> for ConfigError {
    fn from(e: ModelError) -> Self {
        ConfigError::Invalid(e.to_string())
    }
}

/// `[plant]` section. Inductance bounds are given as two parallel arrays,
/// which reads better in TOML than an array of pairs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlantSection {
    pub l_tau_h: Vec<f64>,
    pub r_tau_ohm: Vec<f64>,
    pub l_min_h: Vec<f64>,
    pub l_max_h: Vec<f64>,
    pub c_dc_f: f64,
    /// Constant-current load [A] used by static analysis (`verify`);
    /// simulation runs take their load from the scenario instead.
    pub i_ell_a: f64,
    pub y_siemens: f64,
}

impl PlantSection {
    fn to_params(&self) -> Result<PlantParams, ConfigError> {
        let n_s = self.l_tau_h.len();
        if self.l_min_h.len() != n_s || self.l_max_h.len() != n_s {
            return Err(ConfigError::Invalid(format!(
                "plant.l_min_h and plant.l_max_h must have {n_s} entries like plant.l_tau_h (got {} and {})",
                self.l_min_h.len(),
                self.l_max_h.len()
            )));
        }
        let params = PlantParams {
            n_s,
            l_tau_h: self.l_tau_h.clone(),
            r_tau_ohm: self.r_tau_ohm.clone(),
            l_bounds_h: self
                .l_min_h
                .iter()
                .zip(&self.l_max_h)
                .map(|(&lo, &hi)| (lo, hi))
                .collect(),
            c_dc_f: self.c_dc_f,
            i_ell_a: self.i_ell_a,
            y_siemens: self.y_siemens,
        };
        params
            .validate()
            .map_err(|e| ConfigError::Invalid(format!("plant: {e}")))?;
        Ok(params)
    }
}

/// `[consensus_known_r]` section (baseline C3).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConsensusKnownRSection {
    /// The resistance table C3 trusts [Ω]; deliberately allowed to differ
    /// from the true `plant.r_tau_ohm` to study model error.
    pub assumed_r_ohm: Vec<f64>,
}

/// `[graph]` section.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GraphSection {
    /// Undirected edges as `[a, b]` node-index pairs (0-based).
    pub edges: Vec<(usize, usize)>,
    /// Uniform communication delay [s]; 0 disables delay handling entirely.
    pub delay_s: f64,
}

/// `[initial]` section.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InitialMode {
    /// De-energized lines, bus precharged, controller integrators at zero.
    #[default]
    Cold,
    /// Start on the equilibrium of the first load segment (warm start).
    Equilibrium,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct InitialSection {
    #[serde(default)]
    pub mode: InitialMode,
    /// Bus precharge [V] for cold starts; defaults to the setpoint.
    #[serde(default)]
    pub v_dc_v: Option<f64>,
}

/// `[output]` section.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSection {
    /// Directory for CSV/JSON artifacts, created if missing.
    pub dir: String,
}

impl Default for OutputSection {
    fn default() -> Self {
        OutputSection { dir: "out".into() }
    }
}

/// A full, validated run description.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub schema_version: u32,
    pub plant: PlantSection,
    /// Adaptive-controller gains (also reused by C3 for `w`, `t_theta`, and
    /// the setpoint).
    pub gains: ControllerGains,
    /// Droop baseline; optional, required only to run "c2".
    #[serde(default)]
    pub droop: Option<DroopGains>,
    /// Known-resistance consensus baseline; optional, required only to run
    /// "c3".
    #[serde(default)]
    pub consensus_known_r: Option<ConsensusKnownRSection>,
    pub graph: GraphSection,
    pub scenario: Scenario,
    pub integrator: IntegratorConfig,
    #[serde(default)]
    pub initial: InitialSection,
    /// Measurement noise on controller inputs; absent = noise-free.
    #[serde(default)]
    pub noise: Option<MeasurementNoise>,
    #[serde(default)]
    pub output: OutputSection,
}

impl RunConfig {
    /// Read and validate a TOML file.
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_toml_str(&text, &path.display().to_string())
    }

    /// Parse and validate TOML text; `origin` names the source in messages.
    pub fn from_toml_str(text: &str, origin: &str) -> Result<Self, ConfigError> {
        let cfg: RunConfig = toml::from_str(text).map_err(|source| ConfigError::Parse {
            path: origin.to_string(),
            source: Box::new(source),
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Cross-field validation beyond what the individual types check.
    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(ConfigError::Invalid(format!(
                "schema_version = {} is not supported; this build reads version {}",
                self.schema_version, SCHEMA_VERSION
            )));
        }
        let params = self.plant.to_params()?;
        let n_s = params.n_s;
        self.gains
            .validate(n_s)
            .map_err(|e| ConfigError::Invalid(format!("gains: {e}")))?;
        if let Some(droop) = &self.droop {
            droop
                .validate(n_s)
                .map_err(|e| ConfigError::Invalid(format!("droop: {e}")))?;
            if droop.v_dc_star_v != self.gains.v_dc_star_v {
                return Err(ConfigError::Invalid(format!(
                    "droop.v_dc_star_v = {} disagrees with gains.v_dc_star_v = {}; all setpoints must be identical",
                    droop.v_dc_star_v, self.gains.v_dc_star_v
                )));
            }
        }
        if let Some(c3) = &self.consensus_known_r {
            if c3.assumed_r_ohm.len() != n_s {
                return Err(ConfigError::Invalid(format!(
                    "consensus_known_r.assumed_r_ohm must have {n_s} entries, got {}",
                    c3.assumed_r_ohm.len()
                )));
            }
            if let Some((i, &r)) = c3
                .assumed_r_ohm
                .iter()
                .enumerate()
                .find(|(_, r)| !(r.is_finite() && **r > 0.0))
            {
                return Err(ConfigError::Invalid(format!(
                    "consensus_known_r.assumed_r_ohm[{i}] = {r} must be finite and > 0"
                )));
            }
        }
        // Builds and checks connectivity.
        CommGraph::new(n_s, &self.graph.edges, self.graph.delay_s)
            .map_err(|e| ConfigError::Invalid(format!("graph: {e}")))?;
        self.scenario
            .validate()
            .map_err(|e| ConfigError::Invalid(format!("scenario: {e}")))?;
        if self.scenario.v_dc_star_v != self.gains.v_dc_star_v {
            return Err(ConfigError::Invalid(format!(
                "scenario.v_dc_star_v = {} disagrees with gains.v_dc_star_v = {}; all setpoints must be identical",
                self.scenario.v_dc_star_v, self.gains.v_dc_star_v
            )));
        }
        self.integrator
            .validate()
            .map_err(|e| ConfigError::Invalid(format!("integrator: {e}")))?;
        if let Some(noise) = &self.noise {
            noise
                .validate()
                .map_err(|e| ConfigError::Invalid(format!("noise: {e}")))?;
        }
        if let Some(v0) = self.initial.v_dc_v {
            if !v0.is_finite() {
                return Err(ConfigError::Invalid(format!(
                    "initial.v_dc_v = {v0} must be finite"
                )));
            }
        }
        Ok(())
    }

    /// Plant parameters with the scenario's per-unit admittance (if any)
    /// folded in.
    pub fn effective_params(&self) -> Result<PlantParams, ConfigError> {
        let mut params = self.plant.to_params()?;
        if let Some(y) = self.scenario.y_siemens() {
            params.y_siemens = y;
        }
        Ok(params)
    }

    pub fn comm_graph(&self) -> Result<CommGraph, ConfigError> {
        let params = self.plant.to_params()?;
        Ok(CommGraph::new(
            params.n_s,
            &self.graph.edges,
            self.graph.delay_s,
        )?)
    }

    /// Resolve a controller tag ("c1", "c2", "c3") against this config.
    pub fn controller(&self, which: &str) -> Result<ControllerSpec, ConfigError> {
        match which {
            "c1" => Ok(ControllerSpec::Adaptive(self.gains.clone())),
            "c2" => self
                .droop
                .clone()
                .map(ControllerSpec::Droop)
                .ok_or_else(|| {
                    ConfigError::Invalid(
                        "controller c2 requested but the config has no [droop] section".into(),
                    )
                }),
            "c3" => self
                .consensus_known_r
                .as_ref()
                .map(|c3| ControllerSpec::ConsensusKnownR {
                    gains: self.gains.clone(),
                    assumed_r_ohm: c3.assumed_r_ohm.clone(),
                })
                .ok_or_else(|| {
                    ConfigError::Invalid(
                        "controller c3 requested but the config has no [consensus_known_r] section"
                            .into(),
                    )
                }),
            other => Err(ConfigError::Invalid(format!(
                "unknown controller {other:?} (expected c1, c2, or c3)"
            ))),
        }
    }

    /// Build the initial state: cold, or on the first segment's equilibrium.
    pub fn initial_state(&self) -> Result<InitialState, ConfigError> {
        let params = self.effective_params()?;
        match self.initial.mode {
            InitialMode::Cold => {
                let v0 = self.initial.v_dc_v.unwrap_or(self.scenario.v_dc_star_v);
                Ok(InitialState::cold(params.n_s, v0))
            }
            InitialMode::Equilibrium => {
                let mut at_load = params;
                at_load.i_ell_a = self.scenario.segment_i_ell_a(0);
                let eq = compute_equilibrium(&at_load, &self.gains, &vec![0.0; at_load.n_s])?;
                let (plant, ctrl) = eq.initial_state();
                Ok(InitialState::new(plant, ctrl))
            }
        }
    }
}
