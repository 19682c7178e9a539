#ifndef TOPOWMAMBA_H
#define TOPOWMAMBA_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

// `flag` values of [`TwmClassMetrics`].
#define TWM_FLAG_NONE 0

#define TWM_FLAG_BOTH_EMPTY 1

#define TWM_FLAG_PRED_EMPTY 2

#define TWM_FLAG_GT_EMPTY 3

typedef enum TwmStatus {
  TWM_STATUS_OK = 0,
  TWM_STATUS_NULL_POINTER = 1,
  TWM_STATUS_INVALID_ARGUMENT = 2,
  TWM_STATUS_IO = 3,
  // Malformed or corrupt checkpoint.
  TWM_STATUS_FORMAT = 4,
  TWM_STATUS_SHAPE = 5,
  TWM_STATUS_NON_FINITE = 6,
  TWM_STATUS_BUFFER_TOO_SMALL = 7,
  TWM_STATUS_INTERNAL = 8,
} TwmStatus;

// Opaque model handle.
typedef struct TwmModel TwmModel;

typedef struct TwmModelInfo {
  uint32_t in_channels;
  uint32_t num_classes;
  uint32_t height;
  uint32_t width;
  uint64_t num_params;
} TwmModelInfo;

// Metrics of one foreground class. Dice and IoU in percent, HD95 in mm.
typedef struct TwmClassMetrics {
  uint32_t class_id;
  double dice;
  double iou;
  double hd95;
  uint64_t support;
  uint32_t flag;
} TwmClassMetrics;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message of the last failed call on this thread, or NULL. Valid until the
// next failing call on the same thread.
const char *twm_last_error_message(void);

// Static, NUL-terminated library version.
const char *twm_version(void);

// Loads a checkpoint file. On success `*out` owns a handle to release with
// [`twm_model_free`].
//
// # Safety
// `path` must be a NUL-terminated string and `out` a writable pointer.
enum TwmStatus twm_model_load(const char *path, struct TwmModel **out);

// # Safety
// `model` must be NULL or a handle from [`twm_model_load`] not yet freed.
void twm_model_free(struct TwmModel *model);

// # Safety
// `model` must be a live handle and `info` a writable pointer.
enum TwmStatus twm_model_info(const struct TwmModel *model, struct TwmModelInfo *info);

// Segments one grayscale slice of any size. The slice is min-max normalised
// and resized to the model input; the class mask is resized back and written
// to `mask` (`height * width` bytes).
//
// # Safety
// `model` must be a live handle, `image` must hold `height * width` floats
// and `mask` must have room for `mask_len` bytes.
enum TwmStatus twm_model_segment(const struct TwmModel *model,
                                 const float *image,
                                 size_t height,
                                 size_t width,
                                 uint8_t *mask,
                                 size_t mask_len);

// Dice, IoU and HD95 for every foreground class `1..num_classes`. Writes
// `num_classes - 1` records to `out`.
//
// # Safety
// `pred` and `gt` must hold `height * width` bytes; `out` must have room for
// `out_len` records.
enum TwmStatus twm_mask_metrics(const uint8_t *pred,
                                const uint8_t *gt,
                                size_t height,
                                size_t width,
                                uint32_t num_classes,
                                double spacing_row_mm,
                                double spacing_col_mm,
                                struct TwmClassMetrics *out,
                                size_t out_len);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* TOPOWMAMBA_H */
