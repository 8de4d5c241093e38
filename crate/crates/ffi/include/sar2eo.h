#ifndef SAR2EO_H
#define SAR2EO_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result of every fallible call. `SAR2EO_STATUS_OK` is zero.
 */
typedef enum Sar2eoStatus {
  SAR2EO_STATUS_OK = 0,
  SAR2EO_STATUS_NULL_POINTER = 1,
  SAR2EO_STATUS_BUFFER_SIZE = 2,
  SAR2EO_STATUS_DIMENSION = 3,
  SAR2EO_STATUS_CONFIG = 4,
  SAR2EO_STATUS_CONTRACT = 5,
  SAR2EO_STATUS_DATA = 6,
  SAR2EO_STATUS_PAIRING = 7,
  SAR2EO_STATUS_NUMERIC = 8,
  SAR2EO_STATUS_FORMAT = 9,
  SAR2EO_STATUS_IO = 10,
  SAR2EO_STATUS_PANIC = 11,
} Sar2eoStatus;

/**
 * A trained generator ready for inference. Opaque to C.
 */
typedef struct Sar2eoModel Sar2eoModel;

/**
 * The four evaluation numbers; `final_score` is the mean of the other three.
 */
typedef struct Sar2eoMetrics {
  double l2;
  double perceptual;
  double frechet;
  double final_score;
} Sar2eoMetrics;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message for the most recent failure on this thread, or null if the last
 * call succeeded. Valid until the next call into this library on the thread.
 */
const char *sar2eo_last_error_message(void);

/**
 * Static, lower-case name of a status code.
 */
const char *sar2eo_status_name(enum Sar2eoStatus status);

/**
 * Library version as a static string.
 */
const char *sar2eo_version(void);

/**
 * Loads a checkpoint file. On success `*out` owns a model that must be
 * released with [`sar2eo_model_free`].
 *
 * # Safety
 * `path` must be a NUL-terminated string and `out` a valid pointer.
 */
enum Sar2eoStatus sar2eo_model_load(const char *path, struct Sar2eoModel **out);

/**
 * Loads a checkpoint from an in-memory copy of the file.
 *
 * # Safety
 * `bytes` must point to `len` readable bytes and `out` be a valid pointer.
 */
enum Sar2eoStatus sar2eo_model_from_bytes(const uint8_t *bytes,
                                          size_t len,
                                          struct Sar2eoModel **out);

/**
 * Releases a model. Null is ignored.
 *
 * # Safety
 * `model` must come from a load call and not be used afterwards.
 */
void sar2eo_model_free(struct Sar2eoModel *model);

/**
 * Side length of the square chips the model translates; 0 for null.
 *
 * # Safety
 * `model` must be null or a live model.
 */
size_t sar2eo_model_resolution(const struct Sar2eoModel *model);

/**
 * Channels of the model's input (`in`) and output (`out`) chips.
 *
 * # Safety
 * `model` must be a live model; the out pointers may be null.
 */
enum Sar2eoStatus sar2eo_model_channels(const struct Sar2eoModel *model,
                                        size_t *in_channels,
                                        size_t *out_channels);

/**
 * Translates one SAR chip using the denoising the model was trained with.
 * `sar` holds `resolution² · in_channels` bytes; `out` receives
 * `resolution² · out_channels` bytes.
 *
 * # Safety
 * Buffers must be valid for the stated lengths.
 */
enum Sar2eoStatus sar2eo_model_translate(const struct Sar2eoModel *model,
                                         const uint8_t *sar,
                                         size_t sar_len,
                                         uint8_t *out,
                                         size_t out_len);

/**
 * Like [`sar2eo_model_translate`] with an explicit median window;
 * `window_n = window_m = 0` disables filtering.
 *
 * # Safety
 * Buffers must be valid for the stated lengths.
 */
enum Sar2eoStatus sar2eo_model_translate_with_window(const struct Sar2eoModel *model,
                                                     const uint8_t *sar,
                                                     size_t sar_len,
                                                     size_t window_n,
                                                     size_t window_m,
                                                     uint8_t *out,
                                                     size_t out_len);

/**
 * Median-filters each channel of a planar image. The border band of half
 * the window is copied through unchanged. `input` and `output` may alias.
 *
 * # Safety
 * Both buffers must hold `width · height · channels` bytes.
 */
enum Sar2eoStatus sar2eo_median_filter(const uint8_t *input,
                                       uint8_t *output,
                                       size_t width,
                                       size_t height,
                                       size_t channels,
                                       size_t window_n,
                                       size_t window_m);

/**
 * Mean over images of the per-image mean squared error in [0, 1] units.
 * `pred` and `reference` each hold `count` consecutive planar images.
 *
 * # Safety
 * Buffers must hold `count · width · height · channels` bytes; `out` must be valid.
 */
enum Sar2eoStatus sar2eo_l2_metric(const uint8_t *pred,
                                   const uint8_t *reference,
                                   size_t count,
                                   size_t width,
                                   size_t height,
                                   size_t channels,
                                   double *out);

/**
 * Scores `count` predictions against references with the seeded feature
 * extractor; `patches` is the perceptual grid side (0 selects the default).
 *
 * # Safety
 * Buffers must hold `count · width · height · channels` bytes; `out` must be valid.
 */
enum Sar2eoStatus sar2eo_evaluate(const uint8_t *pred,
                                  const uint8_t *reference,
                                  size_t count,
                                  size_t width,
                                  size_t height,
                                  size_t channels,
                                  size_t patches,
                                  uint64_t seed,
                                  struct Sar2eoMetrics *out);

/**
 * Mean of the three metrics. Negative or NaN inputs are a contract error.
 *
 * # Safety
 * `out` must be valid.
 */
enum Sar2eoStatus sar2eo_final_score(double l2, double perceptual, double frechet, double *out);

/**
 * Seed of the default feature extractor used by the CLI.
 */
uint64_t sar2eo_default_extractor_seed(void);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* SAR2EO_H */
