#ifndef TGOCR_H
#define TGOCR_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Number of output classes.
 */
#define TGOCR_CLASSES 10

/**
 * Pixels in one preprocessed input image (32 × 32).
 */
#define TGOCR_IMAGE_PIXELS 1024

#define TGOCR_ARCH_MLP 0

#define TGOCR_ARCH_CNN 1

typedef enum TgocrStatus {
  TGOCR_STATUS_OK = 0,
  TGOCR_STATUS_NULL_POINTER = 1,
  TGOCR_STATUS_INVALID_ARGUMENT = 2,
  TGOCR_STATUS_IO = 3,
  /**
   * Undecodable or unsupported image.
   */
  TGOCR_STATUS_IMAGE = 4,
  /**
   * Corrupt, truncated or incompatible checkpoint.
   */
  TGOCR_STATUS_CHECKPOINT = 5,
  TGOCR_STATUS_INTERNAL = 6,
  TGOCR_STATUS_PANIC = 7,
} TgocrStatus;

/**
 * Opaque model handle.
 */
typedef struct TgocrModel TgocrModel;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Library version as a static NUL-terminated string.
 */
const char *tgocr_version(void);

/**
 * Message describing the last failed call on this thread, or null. The
 * pointer stays valid until the next tgocr call on the same thread.
 */
const char *tgocr_last_error(void);

/**
 * Builds a freshly initialized model (`TGOCR_ARCH_MLP` or `TGOCR_ARCH_CNN`).
 *
 * # Safety
 * `out` must be a valid pointer to writable storage for one handle.
 */
enum TgocrStatus tgocr_model_build(uint32_t architecture, uint64_t seed, struct TgocrModel **out);

/**
 * Loads a checkpoint file.
 *
 * # Safety
 * `path` must be a NUL-terminated string; `out` must be writable.
 */
enum TgocrStatus tgocr_model_load(const char *path, struct TgocrModel **out);

/**
 * Writes the model to `path` atomically, recording default optimizer settings.
 *
 * # Safety
 * `model` must be a live handle; `path` a NUL-terminated string.
 */
enum TgocrStatus tgocr_model_save(const struct TgocrModel *model, const char *path);

/**
 * Releases a handle. Null is ignored.
 *
 * # Safety
 * `model` must be null or a handle not yet freed.
 */
void tgocr_model_free(struct TgocrModel *model);

/**
 * # Safety
 * `model` must be a live handle; `out` writable.
 */
enum TgocrStatus tgocr_model_param_count(const struct TgocrModel *model, size_t *out);

/**
 * Classifies one preprocessed image of `TGOCR_IMAGE_PIXELS` values in
 * `[0, 1]` (ink high, row-major). Either output pointer may be null.
 *
 * # Safety
 * `pixels` must point to `len` floats; `probs_out`, if not null, to room
 * for `TGOCR_CLASSES` floats.
 */
enum TgocrStatus tgocr_predict(const struct TgocrModel *model,
                               const float *pixels,
                               size_t len,
                               float *probs_out,
                               uint32_t *class_out);

/**
 * Decodes a 32×32 24-bit BMP held in memory and writes its preprocessed
 * pixels (`TGOCR_IMAGE_PIXELS` floats) to `out`.
 *
 * # Safety
 * `bytes` must point to `len` bytes; `out` to room for the pixels.
 */
enum TgocrStatus tgocr_preprocess_bitmap(const uint8_t *bytes, size_t len, float *out);

/**
 * Decodes, preprocesses and classifies a BMP held in memory.
 *
 * # Safety
 * As for [`tgocr_predict`], with `bytes` pointing to `len` bytes.
 */
enum TgocrStatus tgocr_predict_bitmap(const struct TgocrModel *model,
                                      const uint8_t *bytes,
                                      size_t len,
                                      float *probs_out,
                                      uint32_t *class_out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* TGOCR_H */
