#ifndef FPI_H
#define FPI_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum FpiStatus {
  FPI_STATUS_OK = 0,
  FPI_STATUS_NULL_POINTER = 1,
  FPI_STATUS_INVALID_ARGUMENT = 2,
  FPI_STATUS_DIMENSION_MISMATCH = 3,
  FPI_STATUS_CONFIG = 4,
  FPI_STATUS_PANIC = 5,
} FpiStatus;

/**
 * Opaque model handle.
 */
typedef struct FpiModel FpiModel;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Null-terminated crate version. Static; do not free.
 */
const char *fpi_version(void);

/**
 * Message for the last failed call on this thread, or null. Valid until the
 * next `fpi_*` call on this thread.
 */
const char *fpi_last_error_message(void);

/**
 * Builds a model from an experiment config given as JSON text.
 *
 * # Safety
 * `config_json` must be a valid null-terminated string and `out` a valid
 * pointer. The handle written to `*out` must be released with
 * [`fpi_model_free`].
 */
enum FpiStatus fpi_model_new(const char *config_json, struct FpiModel **out);

/**
 * Releases a handle from [`fpi_model_new`]. Null is ignored.
 *
 * # Safety
 * `model` must be null or a handle not yet freed.
 */
void fpi_model_free(struct FpiModel *model);

/**
 * Latent dimension of the model.
 *
 * # Safety
 * `model` must be a live handle and `out_dim` a valid pointer.
 */
enum FpiStatus fpi_model_dim(const struct FpiModel *model, size_t *out_dim);

/**
 * Deterministic DDIM generation from `seed` to a clean latent.
 *
 * # Safety
 * `seed` must point to `len` doubles and `out` to room for `len` doubles.
 */
enum FpiStatus fpi_generate(const struct FpiModel *model,
                            const double *seed,
                            size_t len,
                            int64_t prompt,
                            double guidance,
                            double *out);

/**
 * Fixed-point inversion of a clean latent back to a seed. With
 * `max_iterations == 1` this is plain DDIM inversion. `out_nfe` may be null.
 *
 * # Safety
 * `z0` must point to `len` doubles and `out_seed` to room for `len` doubles.
 */
enum FpiStatus fpi_invert(const struct FpiModel *model,
                          const double *z0,
                          size_t len,
                          int64_t prompt,
                          double guidance,
                          uint32_t max_iterations,
                          double tolerance,
                          double *out_seed,
                          size_t *out_nfe);

/**
 * Prompt-aware adjustment of an encoded latent, using the adjustment
 * settings from the model's config.
 *
 * # Safety
 * `z0` must point to `len` doubles and `out` to room for `len` doubles.
 */
enum FpiStatus fpi_adjust(const struct FpiModel *model,
                          const double *z0,
                          size_t len,
                          int64_t prompt,
                          double guidance,
                          double *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* FPI_H */
