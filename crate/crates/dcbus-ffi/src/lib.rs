//! C ABI over the `dcbus` toolkit.
//!
//! The interface follows the usual opaque-handle shape: construct a
//! [`DcbusSim`] from a TOML configuration (file or in-memory string), run
//! it, then read scalars and arrays out through getters. Every function
//! that can fail returns a [`DcbusStatus`]; `dcbus_last_error` returns a
//! human-readable message for the most recent failure on the calling
//! thread.
//!
//! Ownership rules are narrow on purpose: handles come from the two
//! constructors and die in `dcbus_sim_free`; every other function borrows.
//! Panics never unwind across the boundary — they are caught and reported
//! as `DCBUS_STATUS_INTERNAL`.
//!
//! The C header (`include/dcbus.h`) is generated from this file at build
//! time.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;

use dcbus::cli::cmd_verify;
use dcbus::config::RunConfig;
use dcbus::error::SimError;
use dcbus::plant::PlantParams;
use dcbus::scenario::Trajectory;
use dcbus::simkernel::{integrate, CommGraph, ControllerSpec, InitialState};

/// Result of every fallible call in this interface.
#[repr(C)]
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum DcbusStatus {
    /// Success.
    Ok = 0,
    /// The operation ran but a verification check failed.
    CheckFailed = 1,
    /// The configuration (or an argument derived from it) was rejected.
    InvalidConfig = 2,
    /// The simulation stopped being finite.
    Numerical = 3,
    /// A required pointer argument was null.
    NullArgument = 4,
    /// An internal error (caught panic); the handle should be freed.
    Internal = 5,
    /// A result was requested before `dcbus_sim_run` succeeded.
    NotRun = 6,
    /// A caller-provided buffer length does not match the system size.
    BadLength = 7,
}

struct SimInner {
    params: PlantParams,
    graph: CommGraph,
    controller: ControllerSpec,
    cfg: RunConfig,
    x0: InitialState,
    traj: Option<Trajectory>,
}

/// Opaque simulation handle (configuration plus, after a successful run,
/// the recorded trajectory).
pub struct DcbusSim {
    inner: SimInner,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_last_error(msg: &str) {
    let clean = msg.replace('\0', " ");
    LAST_ERROR.with(|slot| {
        *slot.borrow_mut() = CString::new(clean).unwrap_or_default();
    });
}

fn fail(status: DcbusStatus, msg: &str) -> DcbusStatus {
    set_last_error(msg);
    status
}

/// Last error message produced by this thread, as a NUL-terminated string.
///
/// The pointer stays valid until the next `dcbus_*` call on the same
/// thread. Never freed by the caller. Empty string when no error has
/// occurred yet.
#[no_mangle]
pub extern "C" fn dcbus_last_error() -> *const c_char {
    LAST_ERROR.with(|slot| slot.borrow().as_ptr())
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn dcbus_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr() as *const c_char
}

fn guarded(f: impl FnOnce() -> DcbusStatus) -> DcbusStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(code) => code,
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "panic of unknown type".to_string());
            fail(DcbusStatus::Internal, &format!("internal panic: {msg}"))
        }
    }
}

/// SAFETY: `ptr` must be null or a valid NUL-terminated string.
unsafe fn str_arg<'a>(ptr: *const c_char, name: &str) -> Result<&'a str, DcbusStatus> {
    if ptr.is_null() {
        return Err(fail(
            DcbusStatus::NullArgument,
            &format!("{name} must not be null"),
        ));
    }
    CStr::from_ptr(ptr).to_str().map_err(|_| {
        fail(
            DcbusStatus::InvalidConfig,
            &format!("{name} is not valid UTF-8"),
        )
    })
}

fn build_handle(cfg: RunConfig, controller_tag: &str) -> Result<Box<DcbusSim>, DcbusStatus> {
    let to_cfg_err = |e: dcbus::config::ConfigError| fail(DcbusStatus::InvalidConfig, &e.to_string());
    let params = cfg.effective_params().map_err(to_cfg_err)?;
    let graph = cfg.comm_graph().map_err(to_cfg_err)?;
    let controller = cfg.controller(controller_tag).map_err(to_cfg_err)?;
    let x0 = cfg.initial_state().map_err(to_cfg_err)?;
    Ok(Box::new(DcbusSim {
        inner: SimInner {
            params,
            graph,
            controller,
            cfg,
            x0,
            traj: None,
        },
    }))
}

unsafe fn construct(
    cfg: Result<RunConfig, dcbus::config::ConfigError>,
    controller: *const c_char,
    out: *mut *mut DcbusSim,
) -> DcbusStatus {
    if out.is_null() {
        return fail(DcbusStatus::NullArgument, "out must not be null");
    }
    let tag = match str_arg(controller, "controller") {
        Ok(s) => s,
        Err(code) => return code,
    };
    let cfg = match cfg {
        Ok(c) => c,
        Err(e) => return fail(DcbusStatus::InvalidConfig, &e.to_string()),
    };
    match build_handle(cfg, tag) {
        Ok(handle) => {
            *out = Box::into_raw(handle);
            DcbusStatus::Ok
        }
        Err(code) => code,
    }
}

/// Create a simulation handle from a TOML configuration file.
///
/// `controller` selects the control law: `"c1"` (adaptive), `"c2"`
/// (droop), or `"c3"` (known-resistance consensus). On success `*out`
/// receives an owned handle that must be released with `dcbus_sim_free`.
///
/// # Safety
/// `config_path` and `controller` must be valid NUL-terminated strings and
/// `out` must point to writable storage for one pointer.
#[no_mangle]
pub unsafe extern "C" fn dcbus_sim_new_from_file(
    config_path: *const c_char,
    controller: *const c_char,
    out: *mut *mut DcbusSim,
) -> DcbusStatus {
    guarded(|| {
        let path = match str_arg(config_path, "config_path") {
            Ok(s) => s,
            Err(code) => return code,
        };
        construct(RunConfig::load(Path::new(path)), controller, out)
    })
}

/// Create a simulation handle from an in-memory TOML string.
///
/// # Safety
/// `config_toml` and `controller` must be valid NUL-terminated strings and
/// `out` must point to writable storage for one pointer.
#[no_mangle]
pub unsafe extern "C" fn dcbus_sim_new_from_toml(
    config_toml: *const c_char,
    controller: *const c_char,
    out: *mut *mut DcbusSim,
) -> DcbusStatus {
    guarded(|| {
        let text = match str_arg(config_toml, "config_toml") {
            Ok(s) => s,
            Err(code) => return code,
        };
        construct(
            RunConfig::from_toml_str(text, "<memory>"),
            controller,
            out,
        )
    })
}

/// Integrate the configured scenario. Replaces any previous run's
/// trajectory on success; on failure the handle keeps no trajectory.
///
/// # Safety
/// `sim` must be a live handle from a constructor.
#[no_mangle]
pub unsafe extern "C" fn dcbus_sim_run(sim: *mut DcbusSim) -> DcbusStatus {
    guarded(|| {
        let Some(sim) = sim.as_mut() else {
            return fail(DcbusStatus::NullArgument, "sim must not be null");
        };
        let inner = &mut sim.inner;
        inner.traj = None;
        match integrate(
            &inner.params,
            &inner.graph,
            &inner.controller,
            &inner.cfg.scenario,
            &inner.cfg.integrator,
            &inner.x0,
            inner.cfg.noise.as_ref(),
        ) {
            Ok(traj) => {
                inner.traj = Some(traj);
                DcbusStatus::Ok
            }
            Err(e @ SimError::Diverged { .. }) => fail(DcbusStatus::Numerical, &e.to_string()),
            Err(e @ SimError::Model(_)) => fail(DcbusStatus::InvalidConfig, &e.to_string()),
        }
    })
}

/// Number of sources (DGUs) in the configured network; 0 for a null handle.
///
/// # Safety
/// `sim` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn dcbus_sim_n_sources(sim: *const DcbusSim) -> usize {
    sim.as_ref().map_or(0, |s| s.inner.params.n_s)
}

/// Number of recorded samples; 0 before a successful run.
///
/// # Safety
/// `sim` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn dcbus_sim_n_samples(sim: *const DcbusSim) -> usize {
    sim.as_ref()
        .and_then(|s| s.inner.traj.as_ref())
        .map_or(0, |t| t.samples.len())
}

fn copy_slice(dst: *mut f64, dst_len: usize, src: &[f64], name: &str) -> DcbusStatus {
    if dst.is_null() {
        return fail(DcbusStatus::NullArgument, &format!("{name} must not be null"));
    }
    if dst_len != src.len() {
        return fail(
            DcbusStatus::BadLength,
            &format!("{name} has length {dst_len}, expected {}", src.len()),
        );
    }
    // SAFETY: caller guarantees dst points to dst_len writable doubles, and
    // dst_len == src.len() was just checked.
    unsafe { std::ptr::copy_nonoverlapping(src.as_ptr(), dst, src.len()) };
    DcbusStatus::Ok
}

/// Final plant state after a successful run: bus voltage into `*v_dc_v`
/// and the source currents into `i_tau_a` (length `i_len == n_sources`).
/// Either output may be null to skip it.
///
/// # Safety
/// `sim` must be a live handle; `v_dc_v`, if non-null, must point to one
/// writable double; `i_tau_a`, if non-null, to `i_len` writable doubles.
#[no_mangle]
pub unsafe extern "C" fn dcbus_sim_final_state(
    sim: *const DcbusSim,
    v_dc_v: *mut f64,
    i_tau_a: *mut f64,
    i_len: usize,
) -> DcbusStatus {
    guarded(|| {
        let Some(sim) = sim.as_ref() else {
            return fail(DcbusStatus::NullArgument, "sim must not be null");
        };
        let Some(traj) = sim.inner.traj.as_ref() else {
            return fail(DcbusStatus::NotRun, "dcbus_sim_run has not succeeded yet");
        };
        if !v_dc_v.is_null() {
            *v_dc_v = traj.final_plant.v_dc_v;
        }
        if !i_tau_a.is_null() {
            let code = copy_slice(i_tau_a, i_len, &traj.final_plant.i_tau_a, "i_tau_a");
            if code != DcbusStatus::Ok {
                return code;
            }
        }
        DcbusStatus::Ok
    })
}

/// Final per-line resistance estimates [ohm] after a successful run
/// (`len == n_sources`). Meaningful for the adaptive controller; droop and
/// known-R runs report the frozen initial estimates.
///
/// # Safety
/// `sim` must be a live handle and `rhat_ohm` must point to `len` writable
/// doubles.
#[no_mangle]
pub unsafe extern "C" fn dcbus_sim_final_rhat(
    sim: *const DcbusSim,
    rhat_ohm: *mut f64,
    len: usize,
) -> DcbusStatus {
    guarded(|| {
        let Some(sim) = sim.as_ref() else {
            return fail(DcbusStatus::NullArgument, "sim must not be null");
        };
        let Some(traj) = sim.inner.traj.as_ref() else {
            return fail(DcbusStatus::NotRun, "dcbus_sim_run has not succeeded yet");
        };
        copy_slice(rhat_ohm, len, &traj.final_ctrl.rhat_ohm, "rhat_ohm")
    })
}

/// One recorded sample: time into `*t_s`, bus voltage into `*v_dc_v`,
/// source currents into `i_tau_a` (length `i_len == n_sources`). Null
/// outputs are skipped. `idx` is in `[0, n_samples)`.
///
/// # Safety
/// `sim` must be a live handle; non-null outputs must point to writable
/// storage of the stated sizes.
#[no_mangle]
pub unsafe extern "C" fn dcbus_sim_sample(
    sim: *const DcbusSim,
    idx: usize,
    t_s: *mut f64,
    v_dc_v: *mut f64,
    i_tau_a: *mut f64,
    i_len: usize,
) -> DcbusStatus {
    guarded(|| {
        let Some(sim) = sim.as_ref() else {
            return fail(DcbusStatus::NullArgument, "sim must not be null");
        };
        let Some(traj) = sim.inner.traj.as_ref() else {
            return fail(DcbusStatus::NotRun, "dcbus_sim_run has not succeeded yet");
        };
        let Some(sample) = traj.samples.get(idx) else {
            return fail(
                DcbusStatus::BadLength,
                &format!("sample index {idx} out of range ({} samples)", traj.samples.len()),
            );
        };
        if !t_s.is_null() {
            *t_s = sample.t_s;
        }
        if !v_dc_v.is_null() {
            *v_dc_v = sample.v_dc_v;
        }
        if !i_tau_a.is_null() {
            let code = copy_slice(i_tau_a, i_len, &sample.i_tau_a, "i_tau_a");
            if code != DcbusStatus::Ok {
                return code;
            }
        }
        DcbusStatus::Ok
    })
}

/// Run the static verification suite on a configuration file: gain
/// condition, equilibrium residual, port-Hamiltonian structure, energy-rate
/// agreement, and the consensus conservation law.
///
/// Returns `DCBUS_STATUS_OK` when every check passes and
/// `DCBUS_STATUS_CHECK_FAILED` (with the failing checks listed in
/// `dcbus_last_error`) when any fails.
///
/// # Safety
/// `config_path` must be a valid NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn dcbus_verify_file(config_path: *const c_char) -> DcbusStatus {
    guarded(|| {
        let path = match str_arg(config_path, "config_path") {
            Ok(s) => s,
            Err(code) => return code,
        };
        match cmd_verify(Path::new(path)) {
            Ok(report) if report.pass => DcbusStatus::Ok,
            Ok(report) => {
                let failing: Vec<&str> = report
                    .rows
                    .iter()
                    .filter(|r| !r.pass)
                    .map(|r| r.check.as_str())
                    .collect();
                fail(
                    DcbusStatus::CheckFailed,
                    &format!("checks failed: {}", failing.join("; ")),
                )
            }
            Err(e) => fail(DcbusStatus::from_cli(&e), &e.to_string()),
        }
    })
}

impl DcbusStatus {
    fn from_cli(e: &dcbus::cli::CliError) -> DcbusStatus {
        use dcbus::cli::{EXIT_CONFIG, EXIT_NUMERICAL};
        match e.exit_code() {
            code if code == EXIT_CONFIG => DcbusStatus::InvalidConfig,
            code if code == EXIT_NUMERICAL => DcbusStatus::Numerical,
            _ => DcbusStatus::CheckFailed,
        }
    }
}

/// Release a handle. Null is a no-op. The handle must not be used again.
///
/// # Safety
/// `sim` must be null or a handle from a constructor that has not already
/// been freed.
#[no_mangle]
pub unsafe extern "C" fn dcbus_sim_free(sim: *mut DcbusSim) {
    if !sim.is_null() {
        drop(Box::from_raw(sim));
    }
}
