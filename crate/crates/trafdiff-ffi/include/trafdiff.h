/* C interface for the trafdiff trace-to-image pipeline. */

#pragma once

/* Generated with cbindgen:0.29.4 */

#include <stdarg.h>
#include <stdbool.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result of every fallible call. Non-zero codes leave a message
 * retrievable with `trafdiff_last_error`.
 */
typedef enum {
  TRAFDIFF_OK = 0,
  TRAFDIFF_ERR_INVALID_ARGUMENT = 1,
  TRAFDIFF_ERR_DOMAIN = 2,
  TRAFDIFF_ERR_IO = 3,
  TRAFDIFF_ERR_MALFORMED = 4,
  TRAFDIFF_ERR_NUMERICAL = 5,
  TRAFDIFF_ERR_MISSING_STAGE = 6,
  TRAFDIFF_ERR_CONFIG = 7,
  TRAFDIFF_ERR_INTERNAL = 8,
} trafdiff_status;

/**
 * Trained generator handle.
 */
typedef struct trafdiff_generator trafdiff_generator;

/**
 * Angular-field image handle (n x n, values in [-1,1]).
 */
typedef struct trafdiff_image trafdiff_image;

/**
 * Owned batch of sampled pixel images.
 */
typedef struct trafdiff_image_set trafdiff_image_set;

/**
 * Enhanced pixel image handle (values in [0,1]).
 */
typedef struct trafdiff_pixels trafdiff_pixels;

/**
 * Normalized trace handle (values in [0,1]).
 */
typedef struct trafdiff_trace trafdiff_trace;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Copy the last error message into `buf` (NUL-terminated, truncated to
 * `cap`). Returns the full message length excluding the terminator.
 */
uintptr_t trafdiff_last_error(char *buf, uintptr_t cap);

/**
 * Library version as a static string.
 */
const char *trafdiff_version(void);

/**
 * Build a normalized trace from `len` samples in [0,1].
 */
trafdiff_status trafdiff_trace_new(const double *samples,
                                   uintptr_t len,
                                   uint32_t class_label,
                                   const char *dataset_id,
                                   trafdiff_trace **out);

void trafdiff_trace_free(trafdiff_trace *trace);

/**
 * Number of samples in the trace.
 */
uintptr_t trafdiff_trace_len(const trafdiff_trace *trace);

/**
 * Encode a trace as its angular-field image.
 */
trafdiff_status trafdiff_trace_encode(const trafdiff_trace *trace, trafdiff_image **out);

void trafdiff_image_free(trafdiff_image *image);

/**
 * Side length n of the n x n image.
 */
uintptr_t trafdiff_image_side(const trafdiff_image *image);

/**
 * Copy the row-major n*n entries into `buf` (capacity `cap`).
 */
trafdiff_status trafdiff_image_copy_data(const trafdiff_image *image, double *buf, uintptr_t cap);

/**
 * Top-left m x m submatrix, equal to encoding the first m samples.
 */
trafdiff_status trafdiff_image_crop_prefix(const trafdiff_image *image,
                                           uintptr_t m,
                                           trafdiff_image **out);

/**
 * Recover the trace from the image diagonal; writes up to `cap` samples
 * and stores the full length in `written`.
 */
trafdiff_status trafdiff_image_decode(const trafdiff_image *image,
                                      double *buf,
                                      uintptr_t cap,
                                      uintptr_t *written);

/**
 * Enhance an angular image to a `resolution` x `resolution` pixel image
 * (shift to [0,1], power-law stretch, area resize).
 */
trafdiff_status trafdiff_image_enhance(const trafdiff_image *image,
                                       uintptr_t resolution,
                                       double gamma,
                                       double gain,
                                       trafdiff_pixels **out);

void trafdiff_pixels_free(trafdiff_pixels *pixels);

uintptr_t trafdiff_pixels_height(const trafdiff_pixels *pixels);

uintptr_t trafdiff_pixels_width(const trafdiff_pixels *pixels);

/**
 * Class label carried by the image metadata.
 */
uint32_t trafdiff_pixels_class(const trafdiff_pixels *pixels);

/**
 * Copy the row-major h*w pixel values into `buf` (capacity `cap`).
 */
trafdiff_status trafdiff_pixels_copy_data(const trafdiff_pixels *pixels,
                                          double *buf,
                                          uintptr_t cap);

/**
 * Write the image as an 8-bit grayscale PNG.
 */
trafdiff_status trafdiff_pixels_save_png(const trafdiff_pixels *pixels, const char *path);

/**
 * Load a trained generator from its artifact directory.
 */
trafdiff_status trafdiff_generator_load(const char *dir, trafdiff_generator **out);

void trafdiff_generator_free(trafdiff_generator *generator);

/**
 * Copy the generator's class labels into `buf`; stores the full count in
 * `written`. Call with `cap` 0 to query the count.
 */
trafdiff_status trafdiff_generator_classes(const trafdiff_generator *generator,
                                           uint32_t *buf,
                                           uintptr_t cap,
                                           uintptr_t *written);

/**
 * Draw `count` images of `class_label`; same seed, same images.
 */
trafdiff_status trafdiff_generator_sample(trafdiff_generator *generator,
                                          uint32_t class_label,
                                          uintptr_t count,
                                          uint64_t seed,
                                          trafdiff_image_set **out);

void trafdiff_image_set_free(trafdiff_image_set *set);

uintptr_t trafdiff_image_set_len(const trafdiff_image_set *set);

/**
 * Borrow one image from the set; valid until the set is freed. Returns
 * null when the index is out of range.
 */
const trafdiff_pixels *trafdiff_image_set_get(const trafdiff_image_set *set, uintptr_t index);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus
