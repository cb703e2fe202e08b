#ifndef DWSNET_H
#define DWSNET_H

/* Generated by cbindgen from src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum DwsStatus {
  DWS_STATUS_OK = 0,
  DWS_STATUS_NULL_POINTER = 1,
  DWS_STATUS_INVALID_ARGUMENT = 2,
  DWS_STATUS_INVALID_SPEC = 3,
  DWS_STATUS_INVALID_PERMUTATION = 4,
  DWS_STATUS_SHAPE_MISMATCH = 5,
  DWS_STATUS_TOO_LARGE = 6,
  DWS_STATUS_IO = 7,
  DWS_STATUS_CHECKPOINT = 8,
  DWS_STATUS_DIVERGED = 9,
  DWS_STATUS_INTERNAL = 10,
  DWS_STATUS_PANIC = 11,
} DwsStatus;

typedef enum DwsActivation {
  DWS_ACTIVATION_RELU = 0,
  DWS_ACTIVATION_SINE = 1,
  DWS_ACTIVATION_NONE = 2,
} DwsActivation;

/*
 A trained model loaded from a checkpoint.
 */
typedef struct DwsModel DwsModel;

/*
 Layer dimensions of an MLP.
 */
typedef struct DwsSpec DwsSpec;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/*
 Message of the last failed call on this thread, or null. The pointer stays
 valid until the next call into this library from the same thread.
 */
const char *dws_last_error_message(void);

/*
 Releases a string returned by this library. Null is ignored.

 # Safety
 `s` must come from this library and not have been freed.
 */
void dws_string_free(char *s);

/*
 Static version string.
 */
const char *dws_version(void);

/*
 Creates a spec from `len >= 3` positive dimensions `d_0..d_M`.

 # Safety
 `dims` must point to `len` values and `out` must be writable.
 */
enum DwsStatus dws_spec_new(const size_t *dims, size_t len, struct DwsSpec **out);

/*
 # Safety
 `spec` must come from [`dws_spec_new`] and not have been freed. Null is ignored.
 */
void dws_spec_free(struct DwsSpec *spec);

/*
 Length of a flattened single-channel weight vector; 0 for a null spec.

 # Safety
 `spec` must be null or a live handle.
 */
size_t dws_spec_flat_dim(const struct DwsSpec *spec);

/*
 Number of orbits of the symmetry group on weight coordinates; 0 for a null spec.

 # Safety
 `spec` must be null or a live handle.
 */
size_t dws_spec_orbit_count(const struct DwsSpec *spec);

/*
 Runs the verifier. `mc_samples == 0` selects exhaustive mode. Writes the
 overall verdict to `out_pass` and, when `out_json` is not null, the full
 report as a JSON string to free with [`dws_string_free`].

 # Safety
 `spec` must be a live handle; `out_pass` must be writable; `out_json` must
 be null or writable.
 */
enum DwsStatus dws_verify(const struct DwsSpec *spec,
                          size_t mc_samples,
                          double tol,
                          bool *out_pass,
                          char **out_json);

/*
 Applies a group element to a flat single-channel weight vector.
 `perms` holds the permutations of hidden layers `1..M-1` back to back
 (`d_1 + ... + d_{M-1}` entries, each a 0-based image list).

 # Safety
 Pointers must reference buffers of the stated lengths; `output` must hold
 `len` values and may not overlap `input`.
 */
enum DwsStatus dws_apply_action(const struct DwsSpec *spec,
                                const size_t *perms,
                                size_t perms_len,
                                const double *input,
                                double *output,
                                size_t len);

/*
 Evaluates the MLP whose flat weights are `weights` at `x` (`d_0` values),
 writing `d_M` values to `out`.

 # Safety
 Pointers must reference buffers of the stated lengths.
 */
enum DwsStatus dws_mlp_forward(const struct DwsSpec *spec,
                               const double *weights,
                               size_t weights_len,
                               const double *x,
                               size_t x_len,
                               enum DwsActivation activation,
                               double *out,
                               size_t out_len);

/*
 Loads a checkpoint written by `dws train`.

 # Safety
 `path` must be a nul-terminated UTF-8 string; `out` must be writable.
 */
enum DwsStatus dws_model_load(const char *path, struct DwsModel **out);

/*
 # Safety
 `model` must come from [`dws_model_load`] and not have been freed. Null is ignored.
 */
void dws_model_free(struct DwsModel *model);

/*
 Input length the model expects per row; 0 for a null model.

 # Safety
 `model` must be null or a live handle.
 */
size_t dws_model_flat_dim(const struct DwsModel *model);

/*
 Predicts labels for `rows` raw weight vectors stored back to back
 (`rows * row_len` values), writing `rows` values to `out`.

 # Safety
 `inputs` must hold `rows * row_len` values and `out` must hold `rows`.
 */
enum DwsStatus dws_model_predict(const struct DwsModel *model,
                                 const double *inputs,
                                 size_t rows,
                                 size_t row_len,
                                 double *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* DWSNET_H */
