#ifndef GASCA_H
#define GASCA_H

/* Generated by cbindgen. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result codes shared by every function in this library.
 */
typedef enum {
  GASCA_STATUS_OK = 0,
  GASCA_STATUS_NULL_POINTER = 1,
  GASCA_STATUS_INVALID_ARGUMENT = 2,
  GASCA_STATUS_SHAPE = 3,
  GASCA_STATUS_IO = 4,
  GASCA_STATUS_FORMAT = 5,
  GASCA_STATUS_CONFIG = 6,
  GASCA_STATUS_TRAINING_ABORTED = 7,
  GASCA_STATUS_NON_FINITE = 8,
  GASCA_STATUS_BUFFER_TOO_SMALL = 9,
  GASCA_STATUS_PANIC = 10,
} GascaStatus;

/**
 * Generator and discriminator stacks loaded from a checkpoint.
 */
typedef struct GascaModel GascaModel;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Library version as a static NUL-terminated string.
 */
const char *gasca_version(void);

/**
 * Copies the calling thread's last error message into `buf` (truncated and
 * NUL-terminated) and returns the full message length excluding the NUL.
 * Returns 0 when no error has been recorded.
 *
 * # Safety
 * `buf` must be null or valid for `len` bytes.
 */
size_t gasca_last_error(char *buf, size_t len);

/**
 * Loads a checkpoint file into a new model handle.
 *
 * # Safety
 * `path` must be a NUL-terminated string; `out` must be writable.
 */
GascaStatus gasca_model_load(const char *path, GascaModel **out);

/**
 * Releases a model handle. Null is ignored.
 *
 * # Safety
 * `model` must come from [`gasca_model_load`] and not be used afterwards.
 */
void gasca_model_free(GascaModel *model);

/**
 * Writes the model back out as a checkpoint.
 *
 * # Safety
 * `model` must be a live handle; `path` a NUL-terminated string.
 */
GascaStatus gasca_model_save(const GascaModel *model, const char *path);

/**
 * Generator depth and per-item input/code element counts.
 *
 * # Safety
 * `model` must be a live handle; outputs must be writable.
 */
GascaStatus gasca_model_info(const GascaModel *model,
                             size_t *depth,
                             size_t *input_len,
                             size_t *code_len);

/**
 * Per-item input shape `(channels, height, width)`.
 *
 * # Safety
 * `model` must be a live handle; outputs must be writable.
 */
GascaStatus gasca_model_input_shape(const GascaModel *model,
                                    size_t *channels,
                                    size_t *height,
                                    size_t *width);

/**
 * Full reconstruction of `batch` NCHW items. `out` receives
 * `batch * input_len` values.
 *
 * # Safety
 * `input` must hold `batch * input_len` values; `out` must hold `out_len`.
 */
GascaStatus gasca_reconstruct(const GascaModel *model,
                              const double *input,
                              size_t batch,
                              double *out,
                              size_t out_len);

/**
 * Codes of `batch` items through every encoder. `out` receives
 * `batch * code_len` values.
 *
 * # Safety
 * As [`gasca_reconstruct`].
 */
GascaStatus gasca_encode(const GascaModel *model,
                         const double *input,
                         size_t batch,
                         double *out,
                         size_t out_len);

/**
 * Discriminator probabilities, one per item.
 *
 * # Safety
 * As [`gasca_reconstruct`], with `out` holding at least `batch` values.
 */
GascaStatus gasca_discriminate(const GascaModel *model,
                               const double *input,
                               size_t batch,
                               double *out,
                               size_t out_len);

/**
 * Runs an experiment from a key=value config file, writing its outputs
 * to the configured directory. `GASCA_SEED` overrides the config seed.
 *
 * # Safety
 * `config_path` must be a NUL-terminated string.
 */
GascaStatus gasca_run_experiment(const char *config_path, double *final_val_mse);

/**
 * Validation MSE of a checkpoint and the rotated-input reference MSE.
 *
 * # Safety
 * Paths must be NUL-terminated strings; outputs must be writable.
 */
GascaStatus gasca_evaluate(const char *checkpoint_path,
                           const char *manifest_path,
                           double *val_mse,
                           double *input_mse);

/**
 * Discriminator loss over `m` real/fake probability pairs.
 *
 * # Safety
 * Both arrays must hold `m` values; `loss` must be writable.
 */
GascaStatus gasca_discriminator_loss(const double *d_real,
                                     const double *d_fake,
                                     size_t m,
                                     double *loss);

/**
 * Adversarial loss of the autoencoder; nonzero `non_saturating` selects
 * `-mean(log D)` instead of `mean(log(1 - D))`.
 *
 * # Safety
 * `d_fake` must hold `m` values; `loss` must be writable.
 */
GascaStatus gasca_generator_loss(const double *d_fake,
                                 size_t m,
                                 int32_t non_saturating,
                                 double *loss);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* GASCA_H */
