/* C interface for the gpc clustering library. */

#pragma once

/* Generated with cbindgen:0.27.0 */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Outcome of every fallible call. Matches the CLI's exit-code classes.
 */
typedef enum GpcStatus {
  /**
   * Success.
   */
  GPC_STATUS_OK = 0,
  /**
   * Invalid configuration or arguments.
   */
  GPC_STATUS_USAGE = 1,
  /**
   * Malformed or inconsistent data.
   */
  GPC_STATUS_DATA = 2,
  /**
   * A numerical operation failed.
   */
  GPC_STATUS_NUMERICAL = 3,
  /**
   * A required pointer argument was null.
   */
  GPC_STATUS_NULL_ARGUMENT = 4,
  /**
   * The implementation panicked; state may be inconsistent.
   */
  GPC_STATUS_PANIC = 5,
} GpcStatus;

/**
 * A run configuration; starts at the documented defaults.
 */
typedef struct GpcConfig GpcConfig;

/**
 * An in-memory dataset (features plus optional labels).
 */
typedef struct GpcDataset GpcDataset;

/**
 * Everything a fit produced: final mixture, assignments, trace, report.
 */
typedef struct GpcFitResult GpcFitResult;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message for the most recent failure on this thread. The pointer stays
 * valid until the next failing call on the same thread. Never null.
 */
const char *gpc_last_error(void);

/**
 * Loads a dataset from a `.csv` or `.gpcf` file (format by extension)
 * into `*out`.
 *
 * # Safety
 * `path` must be NUL-terminated; `out` must be valid for writes.
 */
enum GpcStatus gpc_dataset_load(const char *path, struct GpcDataset **out);

/**
 * Saves a dataset to `.csv` or `.gpcf` (format by extension).
 *
 * # Safety
 * `ds` must be a live dataset handle; `path` must be NUL-terminated.
 */
enum GpcStatus gpc_dataset_save(const struct GpcDataset *ds, const char *path);

/**
 * Generates a synthetic dataset: `k_true` Gaussian classes of `per_class`
 * points in `d` dimensions, labels kept on a `labelled_fraction` share of
 * the first `k_labelled` classes. `*out` receives the visible dataset;
 * `*out_truth` (optional, may be null) the fully labelled ground truth.
 *
 * # Safety
 * `out` must be valid for writes; `out_truth` may be null.
 */
enum GpcStatus gpc_dataset_gen(size_t k_true,
                               size_t d,
                               size_t per_class,
                               size_t k_labelled,
                               double labelled_fraction,
                               double center_scale,
                               double sigma,
                               uint64_t seed,
                               struct GpcDataset **out,
                               struct GpcDataset **out_truth);

/**
 * Number of instances; 0 for a null handle.
 *
 * # Safety
 * `ds` must be a live dataset handle or null.
 */
size_t gpc_dataset_len(const struct GpcDataset *ds);

/**
 * Feature dimension; 0 for a null handle.
 *
 * # Safety
 * `ds` must be a live dataset handle or null.
 */
size_t gpc_dataset_dim(const struct GpcDataset *ds);

/**
 * Releases a dataset handle. Null is a no-op.
 *
 * # Safety
 * `ds` must have come from this library and not been freed before.
 */
void gpc_dataset_free(struct GpcDataset *ds);

/**
 * Fresh configuration at the library defaults. Never fails.
 */
struct GpcConfig *gpc_config_new(void);

/**
 * Sets one kebab-cased key (e.g. `"k-init"`, `"epochs"`, `"replearn"`)
 * to a string value; the value grammar matches the config-file format.
 *
 * # Safety
 * `cfg` must be a live config handle; `key`/`value` NUL-terminated.
 */
enum GpcStatus gpc_config_set(struct GpcConfig *cfg, const char *key, const char *value);

/**
 * Releases a config handle. Null is a no-op.
 *
 * # Safety
 * `cfg` must have come from this library and not been freed before.
 */
void gpc_config_free(struct GpcConfig *cfg);

/**
 * Runs the full estimation loop. `truth` may be null (no evaluation);
 * `cfg` may be null (defaults). On success `*out` receives the result.
 *
 * # Safety
 * Handles must be live; `out` must be valid for writes.
 */
enum GpcStatus gpc_fit(const struct GpcDataset *ds,
                       const struct GpcDataset *truth,
                       const struct GpcConfig *cfg,
                       struct GpcFitResult **out);

/**
 * Final number of mixture components; 0 for a null handle.
 *
 * # Safety
 * `res` must be a live result handle or null.
 */
size_t gpc_result_k(const struct GpcFitResult *res);

/**
 * Number of assignment rows (= dataset instances); 0 for null.
 *
 * # Safety
 * `res` must be a live result handle or null.
 */
size_t gpc_result_len(const struct GpcFitResult *res);

/**
 * Copies per-instance cluster indices (dataset row order) into `buf`.
 * `len` must equal `gpc_result_len`.
 *
 * # Safety
 * `buf` must be valid for `len` writes.
 */
enum GpcStatus gpc_result_assignments(const struct GpcFitResult *res, size_t *buf, size_t len);

/**
 * Copies per-instance ids (dataset row order) into `buf`. `len` must
 * equal `gpc_result_len`.
 *
 * # Safety
 * `buf` must be valid for `len` writes.
 */
enum GpcStatus gpc_result_ids(const struct GpcFitResult *res, uint64_t *buf, size_t len);

/**
 * Full result record as a JSON string; free with `gpc_string_free`.
 * Null on a null handle or serialization failure.
 *
 * # Safety
 * `res` must be a live result handle or null.
 */
char *gpc_result_json(const struct GpcFitResult *res);

/**
 * Releases a string returned by this library. Null is a no-op.
 *
 * # Safety
 * `s` must have come from this library and not been freed before.
 */
void gpc_string_free(char *s);

/**
 * Releases a fit result handle. Null is a no-op.
 *
 * # Safety
 * `res` must have come from this library and not been freed before.
 */
void gpc_result_free(struct GpcFitResult *res);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus
