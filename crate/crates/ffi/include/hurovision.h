#ifndef HUROVISION_H
#define HUROVISION_H

/* Generated by cbindgen from src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum {
  HV_STATUS_OK = 0,
  HV_STATUS_NULL_POINTER = 1,
  HV_STATUS_INVALID_ARGUMENT = 2,
  HV_STATUS_INVALID_GEOMETRY = 3,
  HV_STATUS_PARSE = 4,
  HV_STATUS_VALIDATION = 5,
  HV_STATUS_CLOCK_SKEW = 6,
  HV_STATUS_NO_DATA = 7,
  HV_STATUS_CONFIG = 8,
  HV_STATUS_IO = 9,
  HV_STATUS_BUFFER_TOO_SMALL = 10,
  HV_STATUS_INTERNAL = 11,
} HvStatus;

typedef enum {
  HV_EVENT_BASKETBALL = 0,
  HV_EVENT_ARCHERY = 1,
  HV_EVENT_MARATHON = 2,
} HvEvent;

/**
 * Accumulates images and scores them on demand.
 */
typedef struct HvEvaluator HvEvaluator;

/**
 * Color-segmentation detector bound to one event profile.
 */
typedef struct HvGeoDetector HvGeoDetector;

/**
 * Decoded detection message.
 */
typedef struct HvMessage HvMessage;

/**
 * Frame skipper combined with an optional rate cap.
 */
typedef struct HvSchedule HvSchedule;

typedef struct {
  double scale;
  double pad_x;
  double pad_y;
  uint32_t src_w;
  uint32_t src_h;
  uint32_t dst;
} HvLetterbox;

typedef struct {
  double x1;
  double y1;
  double x2;
  double y2;
} HvBox;

typedef struct {
  uint32_t class_id;
  double confidence;
  HvBox bbox;
} HvDetection;

/**
 * Normalized center-size box as carried on the wire.
 */
typedef struct {
  double cx;
  double cy;
  double w;
  double h;
} HvNormBox;

typedef struct {
  uint32_t class_id;
  double confidence;
  HvNormBox bbox;
} HvWireDetection;

/**
 * Undefined metrics are NaN.
 */
typedef struct {
  uint64_t images;
  uint64_t ground_truths;
  uint64_t predictions;
  double precision;
  double recall;
  double map50;
  double map50_95;
} HvSummary;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Library version as a static NUL-terminated string.
 */
const char *hv_version(void);

/**
 * Message of the last failed call on this thread, or null. Valid until the
 * next failing call on the same thread.
 */
const char *hv_last_error(void);

/**
 * # Safety
 * `out_params` must be valid for writes.
 */
HvStatus hv_letterbox_params(uint32_t src_w, uint32_t src_h, uint32_t dst, HvLetterbox *out_params);

/**
 * Maps a source-frame box onto the model plane.
 *
 * # Safety
 * Pointers must be valid.
 */
HvStatus hv_letterbox_box(const HvLetterbox *p, const HvBox *b, HvBox *out_box);

/**
 * Maps a model-plane box back to the source frame, clamped to it.
 *
 * # Safety
 * Pointers must be valid.
 */
HvStatus hv_unletterbox_box(const HvLetterbox *p, const HvBox *b, HvBox *out_box);

/**
 * # Safety
 * Pointers must be valid.
 */
HvStatus hv_iou(const HvBox *a, const HvBox *b, double *out_iou);

/**
 * Greedy NMS. Writes the indices of the kept detections, highest
 * confidence first, into `out_indices` (room for `n` entries suffices).
 * Boxes must have non-negative coordinates.
 *
 * # Safety
 * `dets` must hold `n` entries and `out_indices` `cap` entries.
 */
HvStatus hv_nms(const HvDetection *dets,
                size_t n,
                double iou_threshold,
                bool per_class,
                size_t *out_indices,
                size_t cap,
                size_t *out_len);

/**
 * Parses one JSON message.
 *
 * # Safety
 * `json` must hold `len` bytes; `out_msg` must be valid for writes.
 */
HvStatus hv_message_decode(const uint8_t *json, size_t len, HvMessage **out_msg);

/**
 * Builds a message from normalized detections.
 *
 * # Safety
 * `dets` must hold `n` entries; `labels` must hold `n` NUL-terminated strings.
 */
HvStatus hv_message_new(uint64_t frame_id,
                        double timestamp,
                        uint32_t frame_w,
                        uint32_t frame_h,
                        const HvWireDetection *dets,
                        const char *const *labels,
                        size_t n,
                        HvMessage **out_msg);

/**
 * Writes the JSON text without a terminating NUL. `out_len` receives the
 * required size even when `cap` is too small.
 *
 * # Safety
 * `buf` must hold `cap` bytes.
 */
HvStatus hv_message_encode(const HvMessage *msg, uint8_t *buf, size_t cap, size_t *out_len);

/**
 * # Safety
 * `msg` must come from this library.
 */
uint64_t hv_message_frame_id(const HvMessage *msg);

/**
 * # Safety
 * `msg` must come from this library.
 */
double hv_message_timestamp(const HvMessage *msg);

/**
 * # Safety
 * `msg` must come from this library; outputs must be valid for writes.
 */
HvStatus hv_message_frame_size(const HvMessage *msg, uint32_t *out_w, uint32_t *out_h);

/**
 * # Safety
 * `msg` must come from this library.
 */
size_t hv_message_len(const HvMessage *msg);

/**
 * Detection `i` of the message.
 *
 * # Safety
 * `msg` must come from this library; `out_det` must be valid for writes.
 */
HvStatus hv_message_get(const HvMessage *msg, size_t i, HvWireDetection *out_det);

/**
 * Copies the label of detection `i`, without a terminating NUL.
 *
 * # Safety
 * `msg` must come from this library; `out_label` must hold `cap` bytes.
 */
HvStatus hv_message_label(const HvMessage *msg,
                          size_t i,
                          uint8_t *out_label,
                          size_t cap,
                          size_t *out_len);

/**
 * # Safety
 * `msg` must come from this library or be null; it is invalid afterwards.
 */
void hv_message_free(HvMessage *msg);

/**
 * Admits every `skip`th frame, then at most `rate_cap` per second.
 * A `rate_cap` of zero or less disables the cap.
 *
 * # Safety
 * `out_schedule` must be valid for writes.
 */
HvStatus hv_schedule_new(uint64_t skip, double rate_cap, HvSchedule **out_schedule);

/**
 * Decides whether frame `frame_index` seen at `now` seconds is processed.
 *
 * # Safety
 * `s` must come from this library; `out_admit` must be valid for writes.
 */
HvStatus hv_schedule_admit(HvSchedule *s, uint64_t frame_index, double now, bool *out_admit);

/**
 * # Safety
 * `s` must come from this library or be null.
 */
void hv_schedule_free(HvSchedule *s);

/**
 * Detector with the built-in profile of `event`.
 *
 * # Safety
 * `out_detector` must be valid for writes.
 */
HvStatus hv_geo_new(HvEvent event, HvGeoDetector **out_detector);

/**
 * Detector with a profile given as TOML text.
 *
 * # Safety
 * `toml` must be NUL-terminated; `out_detector` must be valid for writes.
 */
HvStatus hv_geo_from_profile(const char *toml, HvGeoDetector **out_detector);

/**
 * Runs the detector on a packed RGB8 frame of `width * height * 3` bytes.
 *
 * # Safety
 * `rgb` must hold the frame and `out_dets` `cap` entries.
 */
HvStatus hv_geo_detect(const HvGeoDetector *d,
                       const uint8_t *rgb,
                       uint32_t width,
                       uint32_t height,
                       HvDetection *out_dets,
                       size_t cap,
                       size_t *out_len);

/**
 * Number of classes the detector reports.
 *
 * # Safety
 * `d` must come from this library.
 */
size_t hv_geo_num_classes(const HvGeoDetector *d);

/**
 * # Safety
 * `d` must come from this library or be null.
 */
void hv_geo_free(HvGeoDetector *d);

/**
 * Evaluator over `num_classes` classes. Precision and recall count
 * predictions scoring above `conf_threshold` that match at `iou_threshold`.
 *
 * # Safety
 * `out_evaluator` must be valid for writes.
 */
HvStatus hv_evaluator_new(uint32_t num_classes,
                          double iou_threshold,
                          double conf_threshold,
                          HvEvaluator **out_evaluator);

/**
 * Adds one image: its ground-truth boxes and its predictions.
 *
 * # Safety
 * `gts` must hold `n_gts` entries and `preds` `n_preds`.
 */
HvStatus hv_evaluator_add_image(HvEvaluator *e,
                                const uint32_t *gt_classes,
                                const HvBox *gts,
                                size_t n_gts,
                                const HvDetection *preds,
                                size_t n_preds);

/**
 * Scores everything added so far.
 *
 * # Safety
 * `e` must come from this library; `out_summary` must be valid for writes.
 */
HvStatus hv_evaluator_summary(const HvEvaluator *e, HvSummary *out_summary);

/**
 * # Safety
 * `e` must come from this library or be null.
 */
void hv_evaluator_free(HvEvaluator *e);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* HUROVISION_H */
