#ifndef LESIONSEG_H
#define LESIONSEG_H

#include <stdarg.h>
#include <stdbool.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum LsStatus {
  LS_STATUS_OK = 0,
  LS_STATUS_NULL_POINTER = 1,
  LS_STATUS_INVALID_ARGUMENT = 2,
  LS_STATUS_BUFFER_TOO_SMALL = 3,
  LS_STATUS_IO = 4,
  LS_STATUS_MODEL = 5,
  LS_STATUS_PANIC = 6,
} LsStatus;

// Loaded detector and segmentor.
typedef struct LsPipeline LsPipeline;

// Axis-aligned box in pixels, `[x1, x2) × [y1, y2)`.
typedef struct LsBox {
  float x1;
  float y1;
  float x2;
  float y2;
  float score;
} LsBox;

typedef struct LsMetrics {
  double accuracy;
  double dice;
  double jaccard;
  double sensitivity;
  double specificity;
} LsMetrics;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Library version as a static NUL-terminated string.
const char *ls_version(void);

// Message of the last failed call on this thread, or "" if none. Valid
// until the next failing call on the same thread.
const char *ls_last_error_message(void);

// Loads the pipeline described by a JSON config file.
enum LsStatus ls_pipeline_open(const char *config_path, struct LsPipeline **out);

// Segments an interleaved RGB8 image of `width × height` pixels into
// `mask_out`, one byte per pixel (0 or 255). `mask_len` must be at least
// `width * height`.
enum LsStatus ls_pipeline_segment(const struct LsPipeline *pipeline,
                                  const uint8_t *rgb,
                                  uintptr_t width,
                                  uintptr_t height,
                                  uint8_t *mask_out,
                                  uintptr_t mask_len);

// Frees a pipeline; null is ignored.
void ls_pipeline_close(struct LsPipeline *pipeline);

// Intersection over union of two boxes; 0 if either pointer is null.
float ls_iou(const struct LsBox *a, const struct LsBox *b);

// Greedy non-maximum suppression. Survivors are written to `kept` in
// descending score order and their count to `kept_count`; `kept` must have
// room for `count` boxes.
enum LsStatus ls_nms(const struct LsBox *boxes,
                     uintptr_t count,
                     float threshold,
                     struct LsBox *kept,
                     uintptr_t *kept_count);

// Pixel metrics of a predicted mask against the ground truth; both are
// `len` bytes, nonzero meaning lesion.
enum LsStatus ls_metrics(const uint8_t *pred,
                         const uint8_t *gt,
                         uintptr_t len,
                         struct LsMetrics *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* LESIONSEG_H */
