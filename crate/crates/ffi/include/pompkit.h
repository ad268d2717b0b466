#ifndef POMPKIT_H
#define POMPKIT_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stddef.h>
#include <stdint.h>

/**
 * Result codes.
 */
typedef enum PkStatus {
  PK_STATUS_OK = 0,
  PK_STATUS_NULL_POINTER = 1,
  PK_STATUS_INVALID_ARGUMENT = 2,
  PK_STATUS_VALIDATION = 3,
  PK_STATUS_FILTERING_LIMIT = 4,
  PK_STATUS_MODEL_ERROR = 5,
  PK_STATUS_NUMERICAL = 6,
  PK_STATUS_IO = 7,
  PK_STATUS_PANIC = 8,
} PkStatus;

/**
 * An observed time series.
 */
typedef struct PkData PkData;

/**
 * A model: hooks, metadata and default parameters.
 */
typedef struct PkModel PkModel;

/**
 * Message of the last failing call on this thread, or NULL. The pointer
 * stays valid until the next failing call on the same thread.
 */
const char *pk_last_error(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *pk_version(void);

/**
 * Creates a built-in model (`"ou2"` or `"gompertz"`).
 *
 * # Safety
 * `name` must be a NUL-terminated string and `out` a valid pointer.
 */
enum PkStatus pk_model_builtin(const char *name, struct PkModel **out);

/**
 * # Safety
 * `model` must come from [`pk_model_builtin`] or be NULL.
 */
void pk_model_free(struct PkModel *model);

/**
 * Number of parameters, or 0 for NULL.
 *
 * # Safety
 * `model` must be a valid handle or NULL.
 */
size_t pk_model_n_params(const struct PkModel *model);

/**
 * Copies the default parameter vector into `out` (length `len`).
 *
 * # Safety
 * `out` must hold `len` doubles.
 */
enum PkStatus pk_model_defaults(const struct PkModel *model, double *out, size_t len);

/**
 * Writes the NUL-terminated name of parameter `i` into `buf` (capacity `len`).
 *
 * # Safety
 * `buf` must hold `len` bytes.
 */
enum PkStatus pk_model_param_name(const struct PkModel *model, size_t i, char *buf, size_t len);

/**
 * Builds a series from `n` times and an `n x dim_obs` row-major array.
 *
 * # Safety
 * `times` must hold `n` doubles and `obs` `n * dim_obs`.
 */
enum PkStatus pk_data_new(const double *times,
                          size_t n,
                          const double *obs,
                          size_t dim_obs,
                          struct PkData **out);

/**
 * Reads a `time,y1,..` CSV file.
 *
 * # Safety
 * `path` must be NUL-terminated and `out` valid.
 */
enum PkStatus pk_data_read_csv(const char *path, struct PkData **out);

/**
 * # Safety
 * `data` must be a handle from this library or NULL.
 */
void pk_data_free(struct PkData *data);

/**
 * Number of observation times, or 0 for NULL.
 *
 * # Safety
 * `data` must be a valid handle or NULL.
 */
size_t pk_data_len(const struct PkData *data);

/**
 * Observation dimension, or 0 for NULL.
 *
 * # Safety
 * `data` must be a valid handle or NULL.
 */
size_t pk_data_dim(const struct PkData *data);

/**
 * Copies the observations (row-major) into `out` of length `len`.
 *
 * # Safety
 * `out` must hold `len` doubles.
 */
enum PkStatus pk_data_values(const struct PkData *data, double *out, size_t len);

/**
 * Simulates `n` unit-spaced observations at `theta`.
 *
 * # Safety
 * `theta` must hold `p` doubles and `out` be valid.
 */
enum PkStatus pk_simulate(const struct PkModel *model,
                          const double *theta,
                          size_t p,
                          size_t n,
                          uint64_t seed,
                          struct PkData **out);

/**
 * Particle-filter log-likelihood estimate with `j` particles.
 *
 * # Safety
 * `theta` must hold `p` doubles and `loglik` be valid.
 */
enum PkStatus pk_pfilter(const struct PkModel *model,
                         const struct PkData *data,
                         const double *theta,
                         size_t p,
                         size_t j,
                         uint64_t seed,
                         double *loglik);

/**
 * Exact log-likelihood from the model's Kalman oracle.
 *
 * # Safety
 * `theta` must hold `p` doubles and `loglik` be valid.
 */
enum PkStatus pk_kalman_loglik(const struct PkModel *model,
                               const struct PkData *data,
                               const double *theta,
                               size_t p,
                               double *loglik);

/**
 * Runs an experiment config file, as the command-line tool does.
 *
 * # Safety
 * `config_path` must be NUL-terminated.
 */
enum PkStatus pk_run_config(const char *config_path);

#endif  /* POMPKIT_H */
