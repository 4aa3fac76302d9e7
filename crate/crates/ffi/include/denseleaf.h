#ifndef DENSELEAF_H
#define DENSELEAF_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stddef.h>
#include <stdint.h>

/**
 * Status codes returned by every fallible function.
 */
typedef enum DlStatus {
  DL_STATUS_OK = 0,
  DL_STATUS_NULL_POINTER = 1,
  DL_STATUS_INVALID_ARGUMENT = 2,
  DL_STATUS_DIMENSION_MISMATCH = 3,
  DL_STATUS_CONFIG = 4,
  DL_STATUS_IO = 5,
  DL_STATUS_RUNTIME = 6,
  DL_STATUS_PANIC = 7,
} DlStatus;

/**
 * Estimator kinds accepted by [`dl_estimator_fit`], passed as their integer
 * value.
 */
typedef enum DlMethod {
  DL_METHOD_SPLIT_DATA = 0,
  DL_METHOD_FULL_DATA = 1,
  DL_METHOD_KDE = 2,
} DlMethod;

/**
 * A fitted estimator.
 */
typedef struct DlEstimator DlEstimator;

/**
 * A synthetic density model.
 */
typedef struct DlModel DlModel;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Library version as a static NUL-terminated string.
 */
const char *dl_version(void);

/**
 * Length in bytes of the last error message on this thread, excluding the
 * terminating NUL; 0 when there is none.
 */
size_t dl_last_error_length(void);

/**
 * Copies the last error message into `buf` (truncated and always
 * NUL-terminated when `len > 0`). Returns the number of bytes written,
 * excluding the NUL.
 *
 * # Safety
 * `buf` must point to `len` writable bytes or be null.
 */
size_t dl_last_error_message(char *buf, size_t len);

/**
 * Clears the last error on this thread.
 */
void dl_clear_last_error(void);

/**
 * Releases a string returned by this library.
 *
 * # Safety
 * `s` must come from this library and not be freed twice.
 */
void dl_string_free(char *s);

/**
 * Builds a model from a JSON descriptor such as
 * `{"family": "NBm", "d": 4, "seed": 0}`.
 *
 * # Safety
 * `json` must be a NUL-terminated string and `out` a valid pointer.
 */
enum DlStatus dl_model_from_json(const char *json, struct DlModel **out);

/**
 * # Safety
 * `model` must come from [`dl_model_from_json`] or be null.
 */
void dl_model_free(struct DlModel *model);

/**
 * # Safety
 * `model` must be a live model and `out` valid.
 */
enum DlStatus dl_model_dim(const struct DlModel *model, size_t *out);

/**
 * Evaluates the density at `n` points stored row-major in `x` (`n * d`
 * values) and writes `n` values to `out`.
 *
 * # Safety
 * Buffers must hold the stated number of elements.
 */
enum DlStatus dl_model_eval(const struct DlModel *model,
                            const double *x,
                            size_t n,
                            size_t d,
                            double *out);

/**
 * Draws `n` points and writes them row-major into `out` (`n * dim`
 * values).
 *
 * # Safety
 * `out` must hold `n * dim` doubles.
 */
enum DlStatus dl_model_sample(const struct DlModel *model, size_t n, uint64_t seed, double *out);

/**
 * Fits an estimator on `n` points (row-major, `n * d` values).
 *
 * `c` is the bandwidth constant of the chosen method. `beta` is used only by
 * [`DlMethod::Kde`]. `config_json` is an optional network fit configuration
 * (null for defaults).
 *
 * # Safety
 * Pointers must be valid for the stated sizes; `out` must be writable.
 */
enum DlStatus dl_estimator_fit(int32_t method,
                               const double *data,
                               size_t n,
                               size_t d,
                               size_t kernel_order,
                               double c,
                               double beta,
                               const char *config_json,
                               uint64_t seed,
                               struct DlEstimator **out);

/**
 * Restores a network estimator from its JSON manifest.
 *
 * # Safety
 * `json` must be NUL-terminated and `out` writable.
 */
enum DlStatus dl_estimator_from_json(const char *json, struct DlEstimator **out);

/**
 * Serializes an estimator to its JSON manifest; free with
 * [`dl_string_free`].
 *
 * # Safety
 * `est` must be live and `out` writable.
 */
enum DlStatus dl_estimator_to_json(const struct DlEstimator *est, char **out);

/**
 * # Safety
 * `est` must come from this library or be null.
 */
void dl_estimator_free(struct DlEstimator *est);

/**
 * Evaluates the estimator at `n` points (row-major, `n * d` values).
 *
 * # Safety
 * Buffers must hold the stated number of elements.
 */
enum DlStatus dl_estimator_eval(const struct DlEstimator *est,
                                const double *x,
                                size_t n,
                                size_t d,
                                double *out);

/**
 * `φ_n` for a composition with `len = q + 1` layers.
 *
 * # Safety
 * `t` and `alpha` must hold `len` elements; `out` must be writable.
 */
enum DlStatus dl_rate_phi(const size_t *t,
                          const double *alpha,
                          size_t len,
                          uint64_t n,
                          double *out);

/**
 * Covering-entropy bound of the sparse network class, natural log.
 *
 * # Safety
 * `out` must be writable.
 */
enum DlStatus dl_entropy_bound(size_t depth,
                               size_t p0,
                               size_t p_out,
                               size_t s,
                               double delta,
                               double *out);

/**
 * Runs the standard check battery and returns its JSON lines; `*all_pass`
 * receives 1 when every check passed.
 *
 * # Safety
 * `out` and `all_pass` must be writable.
 */
enum DlStatus dl_theory_check(size_t trials, uint64_t seed, char **out, int32_t *all_pass);

/**
 * Runs an experiment described by a JSON config and writes its outputs to
 * the config's `output_dir`.
 *
 * # Safety
 * `config_json` must be NUL-terminated.
 */
enum DlStatus dl_run_experiment(const char *config_json);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* DENSELEAF_H */
