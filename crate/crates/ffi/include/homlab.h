#ifndef HOMLAB_H
#define HOMLAB_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result codes shared by every fallible entry point.
 */
typedef enum HomlabStatus {
  HOMLAB_STATUS_OK = 0,
  HOMLAB_STATUS_NULL_POINTER = 1,
  HOMLAB_STATUS_INVALID_ARGUMENT = 2,
  HOMLAB_STATUS_CONFIG_ERROR = 3,
  HOMLAB_STATUS_SOLVER_FAILURE = 4,
  HOMLAB_STATUS_IO_ERROR = 5,
  /**
   * A Rust panic was caught at the boundary.
   */
  HOMLAB_STATUS_INTERNAL = 6,
} HomlabStatus;

/**
 * Rate models accepted by [`homlab_fit_rate`].
 */
typedef enum HomlabRateModel {
  HOMLAB_RATE_MODEL_POWER = 0,
  HOMLAB_RATE_MODEL_POWER_LOG = 1,
  HOMLAB_RATE_MODEL_POWER_LOG_GAUGE = 2,
} HomlabRateModel;

/**
 * Opaque corrector set of one coefficient sample.
 */
typedef struct HomlabCorrectors HomlabCorrectors;

/**
 * Opaque per-cell coefficient field.
 */
typedef struct HomlabField HomlabField;

/**
 * Opaque grid handle.
 */
typedef struct HomlabGrid HomlabGrid;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Byte length of the last error message on this thread, including the
 * terminating NUL; 0 when no error has been recorded.
 */
size_t homlab_last_error_length(void);

/**
 * Copies the last error message into `buf` (truncated, always
 * NUL-terminated when `len > 0`). Returns the number of bytes written
 * without the NUL.
 *
 * # Safety
 * `buf` must point to `len` writable bytes.
 */
size_t homlab_last_error_message(char *buf, size_t len);

/**
 * Library version as a static NUL-terminated string.
 */
const char *homlab_version(void);

/**
 * Periodic `n x n` torus of side `extent`.
 *
 * # Safety
 * `out` must be a valid pointer to a handle slot.
 */
enum HomlabStatus homlab_grid_periodic(size_t n, double extent, struct HomlabGrid **out);

/**
 * Masked grid of a named shape (`unit-square`, `l-shape`, `sawtooth(k)`).
 *
 * # Safety
 * `shape` must be a NUL-terminated string and `out` a valid handle slot.
 */
enum HomlabStatus homlab_grid_masked(size_t n,
                                     double extent,
                                     const char *shape,
                                     struct HomlabGrid **out);

/**
 * Cells per side; 0 for a null handle.
 *
 * # Safety
 * `grid` must be null or a live grid handle.
 */
size_t homlab_grid_n(const struct HomlabGrid *grid);

/**
 * Number of cells (`n * n`); 0 for a null handle.
 *
 * # Safety
 * `grid` must be null or a live grid handle.
 */
size_t homlab_grid_cell_count(const struct HomlabGrid *grid);

/**
 * # Safety
 * `grid` must be null or a handle from a grid constructor, freed once.
 */
void homlab_grid_free(struct HomlabGrid *grid);

/**
 * Samples sample `index` of the Gaussian-bump coefficient ensemble on `grid`.
 *
 * # Safety
 * `grid` must be a live grid handle and `out` a valid handle slot.
 */
enum HomlabStatus homlab_sample_coefficient(const struct HomlabGrid *grid,
                                            double lambda,
                                            double corr_len,
                                            uint64_t master_seed,
                                            uint64_t index,
                                            struct HomlabField **out);

/**
 * Field from `len` caller-owned values (copied).
 *
 * # Safety
 * `values` must point to `len` readable doubles and `out` be a valid handle slot.
 */
enum HomlabStatus homlab_field_from_values(const double *values,
                                           size_t len,
                                           struct HomlabField **out);

/**
 * Number of values in a field; 0 for a null handle.
 *
 * # Safety
 * `field` must be null or a live field handle.
 */
size_t homlab_field_len(const struct HomlabField *field);

/**
 * Copies the field into `buf`, which must hold exactly `homlab_field_len` values.
 *
 * # Safety
 * `field` must be a live field handle and `buf` point to `len` writable doubles.
 */
enum HomlabStatus homlab_field_copy(const struct HomlabField *field, double *buf, size_t len);

/**
 * # Safety
 * `field` must be null or a handle from a field constructor, freed once.
 */
void homlab_field_free(struct HomlabField *field);

/**
 * Correctors, flux correctors and effective tensor of `field` on a periodic grid.
 *
 * # Safety
 * `grid` and `field` must be live handles and `out` a valid handle slot.
 */
enum HomlabStatus homlab_correctors_compute(const struct HomlabGrid *grid,
                                            const struct HomlabField *field,
                                            double tol,
                                            struct HomlabCorrectors **out);

/**
 * Writes the effective tensor row-major into `out[4]`.
 *
 * # Safety
 * `set` must be a live corrector handle and `out` point to 4 writable doubles.
 */
enum HomlabStatus homlab_correctors_tensor(const struct HomlabCorrectors *set, double *out);

/**
 * # Safety
 * `set` must be null or a handle from [`homlab_correctors_compute`], freed once.
 */
void homlab_correctors_free(struct HomlabCorrectors *set);

/**
 * Log-log rate fit; `r0` is ignored by the power model.
 *
 * # Safety
 * `xs` and `ys` must point to `len` readable doubles; the outputs must be valid.
 */
enum HomlabStatus homlab_fit_rate(const double *xs,
                                  const double *ys,
                                  size_t len,
                                  enum HomlabRateModel model,
                                  double r0,
                                  double *slope,
                                  double *intercept,
                                  double *r_squared);

/**
 * Runs an experiment from a JSON configuration; `out_dir` (nullable)
 * overrides the configured output directory. Results land in
 * `<out_dir>/result.json` next to the CSV tables.
 *
 * # Safety
 * `config_json` must be a NUL-terminated string; `out_dir` null or one.
 */
enum HomlabStatus homlab_run_experiment(const char *config_json, const char *out_dir);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* HOMLAB_H */
