/* C interface to the dcbus DC-network simulation toolkit. */

#ifndef DCBUS_H
#define DCBUS_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

// Result of every fallible call in this interface.
typedef enum DcbusStatus {
  // Success.
  DCBUS_STATUS_OK = 0,
  // The operation ran but a verification check failed.
  DCBUS_STATUS_CHECK_FAILED = 1,
  // The configuration (or an argument derived from it) was rejected.
  DCBUS_STATUS_INVALID_CONFIG = 2,
  // The simulation stopped being finite.
  DCBUS_STATUS_NUMERICAL = 3,
  // A required pointer argument was null.
  DCBUS_STATUS_NULL_ARGUMENT = 4,
  // An internal error (caught panic); the handle should be freed.
  DCBUS_STATUS_INTERNAL = 5,
  // A result was requested before `dcbus_sim_run` succeeded.
  DCBUS_STATUS_NOT_RUN = 6,
  // A caller-provided buffer length does not match the system size.
  DCBUS_STATUS_BAD_LENGTH = 7,
} DcbusStatus;

// Opaque simulation handle (configuration plus, after a successful run,
// the recorded trajectory).
typedef struct DcbusSim DcbusSim;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Last error message produced by this thread, as a NUL-terminated string.
//
// The pointer stays valid until the next `dcbus_*` call on the same
// thread. Never freed by the caller. Empty string when no error has
// occurred yet.
const char *dcbus_last_error(void);

// Library version as a static NUL-terminated string.
const char *dcbus_version(void);

// Create a simulation handle from a TOML configuration file.
//
// `controller` selects the control law: `"c1"` (adaptive), `"c2"`
// (droop), or `"c3"` (known-resistance consensus). On success `*out`
// receives an owned handle that must be released with `dcbus_sim_free`.
//
// # Safety
// `config_path` and `controller` must be valid NUL-terminated strings and
// `out` must point to writable storage for one pointer.
enum DcbusStatus dcbus_sim_new_from_file(const char *config_path,
                                         const char *controller,
                                         struct DcbusSim **out);

// Create a simulation handle from an in-memory TOML string.
//
// # Safety
// `config_toml` and `controller` must be valid NUL-terminated strings and
// `out` must point to writable storage for one pointer.
enum DcbusStatus dcbus_sim_new_from_toml(const char *config_toml,
                                         const char *controller,
                                         struct DcbusSim **out);

// Integrate the configured scenario. Replaces any previous run's
// trajectory on success; on failure the handle keeps no trajectory.
//
// # Safety
// `sim` must be a live handle from a constructor.
enum DcbusStatus dcbus_sim_run(struct DcbusSim *sim);

// Number of sources (DGUs) in the configured network; 0 for a null handle.
//
// # Safety
// `sim` must be null or a live handle.
size_t dcbus_sim_n_sources(const struct DcbusSim *sim);

// Number of recorded samples; 0 before a successful run.
//
// # Safety
// `sim` must be null or a live handle.
size_t dcbus_sim_n_samples(const struct DcbusSim *sim);

// Final plant state after a successful run: bus voltage into `*v_dc_v`
// and the source currents into `i_tau_a` (length `i_len == n_sources`).
// Either output may be null to skip it.
//
// # Safety
// `sim` must be a live handle; `v_dc_v`, if non-null, must point to one
// writable double; `i_tau_a`, if non-null, to `i_len` writable doubles.
enum DcbusStatus dcbus_sim_final_state(const struct DcbusSim *sim,
                                       double *v_dc_v,
                                       double *i_tau_a,
                                       size_t i_len);

// Final per-line resistance estimates [ohm] after a successful run
// (`len == n_sources`). Meaningful for the adaptive controller; droop and
// known-R runs report the frozen initial estimates.
//
// # Safety
// `sim` must be a live handle and `rhat_ohm` must point to `len` writable
// doubles.
enum DcbusStatus dcbus_sim_final_rhat(const struct DcbusSim *sim, double *rhat_ohm, size_t len);

// One recorded sample: time into `*t_s`, bus voltage into `*v_dc_v`,
// source currents into `i_tau_a` (length `i_len == n_sources`). Null
// outputs are skipped. `idx` is in `[0, n_samples)`.
//
// # Safety
// `sim` must be a live handle; non-null outputs must point to writable
// storage of the stated sizes.
enum DcbusStatus dcbus_sim_sample(const struct DcbusSim *sim,
                                  size_t idx,
                                  double *t_s,
                                  double *v_dc_v,
                                  double *i_tau_a,
                                  size_t i_len);

// Run the static verification suite on a configuration file: gain
// condition, equilibrium residual, port-Hamiltonian structure, energy-rate
// agreement, and the consensus conservation law.
//
// Returns `DCBUS_STATUS_OK` when every check passes and
// `DCBUS_STATUS_CHECK_FAILED` (with the failing checks listed in
// `dcbus_last_error`) when any fails.
//
// # Safety
// `config_path` must be a valid NUL-terminated string.
enum DcbusStatus dcbus_verify_file(const char *config_path);

// Release a handle. Null is a no-op. The handle must not be used again.
//
// # Safety
// `sim` must be null or a handle from a constructor that has not already
// been freed.
void dcbus_sim_free(struct DcbusSim *sim);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* DCBUS_H */
