#ifndef LEGSTATE_H
#define LEGSTATE_H

/* Generated by cbindgen from src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result codes.
 */
typedef enum LsStatus {
  LS_STATUS_OK = 0,
  LS_STATUS_NULL_POINTER = 1,
  LS_STATUS_INVALID_ARGUMENT = 2,
  LS_STATUS_SHAPE_MISMATCH = 3,
  LS_STATUS_IO = 4,
  LS_STATUS_CHECKSUM = 5,
  LS_STATUS_FORMAT = 6,
  LS_STATUS_FILTER = 7,
  LS_STATUS_PANIC = 8,
} LsStatus;

/**
 * Opaque filter handle.
 */
typedef struct LsFilter LsFilter;

/**
 * Opaque classifier handle.
 */
typedef struct LsNetwork LsNetwork;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Static description of a status code.
 */
const char *ls_status_message(enum LsStatus status);

/**
 * Creates a filter for the default quadruped geometry and noise model.
 *
 * # Safety
 * `rotation` points to 9 values, `velocity` and `position` to 3 each, and
 * `out` to writable storage for one handle pointer.
 */
enum LsStatus ls_filter_new(const double *rotation,
                            const double *velocity,
                            const double *position,
                            double sigma,
                            double timestamp,
                            struct LsFilter **out);

/**
 * # Safety
 * `filter` is null or a handle from [`ls_filter_new`] not yet freed.
 */
void ls_filter_free(struct LsFilter *filter);

/**
 * Propagates to `timestamp` and applies the contact update.
 *
 * # Safety
 * `gyro` and `accel` point to 3 values, `joint_angles` to `3 * n_legs`
 * values and `contacts` to `n_legs` bytes (nonzero meaning contact).
 */
enum LsStatus ls_filter_step(struct LsFilter *filter,
                             const double *gyro,
                             const double *accel,
                             double timestamp,
                             const double *joint_angles,
                             const uint8_t *contacts,
                             size_t n_legs);

/**
 * Copies the current rotation (9), velocity (3) and position (3). Any output
 * pointer may be null to skip it.
 *
 * # Safety
 * Non-null outputs must have room for the stated number of values.
 */
enum LsStatus ls_filter_state(const struct LsFilter *filter,
                              double *rotation,
                              double *velocity,
                              double *position);

/**
 * Writes the covariance dimension to `dim`.
 *
 * # Safety
 * `dim` must be writable.
 */
enum LsStatus ls_filter_covariance_dim(const struct LsFilter *filter, size_t *dim);

/**
 * Loads a weight file.
 *
 * # Safety
 * `path` is a NUL-terminated string; `out` is writable.
 */
enum LsStatus ls_network_load(const char *path, struct LsNetwork **out);

/**
 * # Safety
 * `network` is null or a handle from [`ls_network_load`] not yet freed.
 */
void ls_network_free(struct LsNetwork *network);

/**
 * Window length, feature count and class count of a loaded network.
 *
 * # Safety
 * Outputs must be writable.
 */
enum LsStatus ls_network_shape(const struct LsNetwork *network,
                               size_t *window,
                               size_t *channels,
                               size_t *classes);

/**
 * Classifies one raw time-major `window × channels` block (normalized
 * internally). Writes the contact code and, if `probs` is non-null, the
 * `classes` probabilities.
 *
 * # Safety
 * `rows` holds `len` values; `state` is writable; non-null `probs` has room
 * for `probs_len` values.
 */
enum LsStatus ls_network_predict(const struct LsNetwork *network,
                                 const double *rows,
                                 size_t len,
                                 uint32_t *state,
                                 double *probs,
                                 size_t probs_len);

/**
 * Encodes per-leg flags (nonzero meaning contact) into the contact code.
 *
 * # Safety
 * `legs` holds `n_legs` bytes.
 */
enum LsStatus ls_encode_contact(const uint8_t *legs, size_t n_legs, uint32_t *code);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* LEGSTATE_H */
