#ifndef SDAN_H
#define SDAN_H

/* Generated by cbindgen from crates/sdan-ffi; do not edit by hand. */

#include <stdarg.h>
#include <stdbool.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Status codes mirroring the CLI exit contract.
 */
typedef enum SdanStatus {
  Ok = 0,
  /**
   * Null pointer or malformed argument.
   */
  InvalidArgument = 1,
  ConfigError = 2,
  DataError = 3,
  NumericError = 4,
} SdanStatus;

/**
 * Opaque trained model handle.
 */
typedef struct SdanModel SdanModel;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Load a model from a checkpoint file, preferring EMA weights.
 * On success writes a handle to `out`; free it with [`sdan_model_free`].
 *
 * # Safety
 * `path` must be a valid NUL-terminated string and `out` a valid pointer.
 */
enum SdanStatus sdan_model_load(const char *path, struct SdanModel **out);

/**
 * # Safety
 * `model` must come from [`sdan_model_load`] and not be freed twice.
 */
void sdan_model_free(struct SdanModel *model);

/**
 * Upscaling factor of a loaded model, or 0 on a null handle.
 *
 * # Safety
 * `model` must be a live handle or null.
 */
int sdan_model_scale(const struct SdanModel *model);

/**
 * Number of learnable scalars of a loaded model, or 0 on a null handle.
 *
 * # Safety
 * `model` must be a live handle or null.
 */
uint64_t sdan_model_param_count(const struct SdanModel *model);

/**
 * Inference cost of a loaded model at the given output resolution, or 0 on
 * a null handle.
 *
 * # Safety
 * `model` must be a live handle or null.
 */
uint64_t sdan_model_flops(const struct SdanModel *model, uint32_t out_height, uint32_t out_width);

/**
 * Super-resolve a PNG file to another PNG file.
 *
 * # Safety
 * All pointers must be valid NUL-terminated strings.
 */
enum SdanStatus sdan_sr_file(const struct SdanModel *model, const char *input, const char *output);

/**
 * Super-resolve an interleaved 8-bit RGB buffer of `width` x `height`
 * pixels. `out` must hold 3 * (scale*width) * (scale*height) bytes.
 *
 * # Safety
 * `rgb` must point at 3*width*height readable bytes and `out` at the
 * documented number of writable bytes.
 */
enum SdanStatus sdan_sr_rgb(const struct SdanModel *model,
                            const uint8_t *rgb,
                            uint32_t width,
                            uint32_t height,
                            uint8_t *out);

/**
 * Copy the most recent error message on this thread into `buf` (truncated,
 * always NUL-terminated). Returns the full message length in bytes.
 *
 * # Safety
 * `buf` must point at `len` writable bytes, or be null to query the length.
 */
uintptr_t sdan_last_error(char *buf, uintptr_t len);

#ifdef __cplusplus
} // extern "C"
#endif // __cplusplus

#endif /* SDAN_H */
