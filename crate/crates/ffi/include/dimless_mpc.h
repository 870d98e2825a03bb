#ifndef DIMLESS_MPC_H
#define DIMLESS_MPC_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum DmStatus {
  DM_STATUS_OK = 0,
  DM_STATUS_NULL_ARGUMENT = 1,
  DM_STATUS_PARSE = 2,
  DM_STATUS_DIMENSIONAL = 3,
  DM_STATUS_CONFIG = 4,
  DM_STATUS_DISSIMILAR = 5,
  DM_STATUS_SOLVER = 6,
  DM_STATUS_BUFFER_TOO_SMALL = 7,
  DM_STATUS_PANIC = 8,
} DmStatus;

/**
 * Controller taking physical states to physical inputs. Warm-starts from
 * its previous solution, so one handle serves one closed loop.
 */
typedef struct DmController DmController;

/**
 * Quantity set with named dimensions and repeating quantities.
 */
typedef struct DmSystem DmSystem;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Library version, a static NUL-terminated string.
 */
const char *dm_version(void);

/**
 * Message of the last failed call on this thread, empty after a success.
 * Valid until the next call on the same thread.
 */
const char *dm_last_error(void);

/**
 * Parses a quantity-set JSON document.
 *
 * # Safety
 * `json` must be a NUL-terminated string and `out` writable.
 */
enum DmStatus dm_system_from_json(const char *json, struct DmSystem **out);

/**
 * Writes the set as JSON into `buf` (NUL included). `written` receives the
 * required size, also when the buffer is too small.
 *
 * # Safety
 * `buf` must hold `len` bytes; `written` may be null.
 */
enum DmStatus dm_system_to_json(const struct DmSystem *system,
                                char *buf,
                                size_t len,
                                size_t *written);

/**
 * # Safety
 * `system` must come from this library and not be used afterwards.
 */
void dm_system_free(struct DmSystem *system);

/**
 * Number of Π-groups.
 *
 * # Safety
 * `out` must be writable.
 */
enum DmStatus dm_system_pi_count(const struct DmSystem *system, size_t *out);

/**
 * Π-group values in order, `len` at least [`dm_system_pi_count`].
 *
 * # Safety
 * `out` must hold `len` doubles.
 */
enum DmStatus dm_system_pi_values(const struct DmSystem *system, double *out, size_t len);

/**
 * Log-space distance between the Π-groups of two comparable sets.
 *
 * # Safety
 * `out` must be writable.
 */
enum DmStatus dm_system_pi_distance(const struct DmSystem *a,
                                    const struct DmSystem *b,
                                    double *out);

/**
 * Similar system with `names[i]` set to `values[i]`; the remaining
 * quantities follow from equal Π-groups.
 *
 * # Safety
 * `names` and `values` must hold `n` entries, names NUL-terminated.
 */
enum DmStatus dm_system_match(const struct DmSystem *reference,
                              const char *const *names,
                              const double *values,
                              size_t n,
                              struct DmSystem **out);

/**
 * Controller for the task in the file at `path` (relative paths inside it
 * resolve against its directory) with dimensionless tunable weights.
 *
 * # Safety
 * `path` must be NUL-terminated and `weights` hold `n_weights` doubles.
 */
enum DmStatus dm_controller_from_task_file(const char *path,
                                           const double *weights,
                                           size_t n_weights,
                                           struct DmController **out);

/**
 * # Safety
 * `controller` must come from this library and not be used afterwards.
 */
void dm_controller_free(struct DmController *controller);

/**
 * # Safety
 * `out` must be writable.
 */
enum DmStatus dm_controller_n_states(const struct DmController *controller, size_t *out);

/**
 * # Safety
 * `out` must be writable.
 */
enum DmStatus dm_controller_n_inputs(const struct DmController *controller, size_t *out);

/**
 * First optimal input at the physical `state`.
 *
 * # Safety
 * `state` must hold `n_states` doubles and `input` room for `n_inputs`.
 */
enum DmStatus dm_controller_step(struct DmController *controller,
                                 const double *state,
                                 size_t n_states,
                                 double *input,
                                 size_t n_inputs);

/**
 * Drops the stored warm start.
 *
 * # Safety
 * `controller` must come from this library.
 */
enum DmStatus dm_controller_reset(struct DmController *controller);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* DIMLESS_MPC_H */
