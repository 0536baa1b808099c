#ifndef AQUIFER_H
#define AQUIFER_H

#include <stdarg.h>
#include <stdbool.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum AqStatus {
  AQ_STATUS_OK = 0,
  AQ_STATUS_NULL_POINTER = 1,
  AQ_STATUS_INVALID_ARGUMENT = 2,
  AQ_STATUS_IO = 3,
  AQ_STATUS_FORMAT = 4,
  AQ_STATUS_VALIDATION = 5,
  AQ_STATUS_SHAPE = 6,
  AQ_STATUS_CONFIG = 7,
  AQ_STATUS_DEGENERATE_LABELS = 8,
  AQ_STATUS_DIVERGED = 9,
  AQ_STATUS_BUFFER_TOO_SMALL = 10,
  AQ_STATUS_PANIC = 11,
} AqStatus;

/**
 * Opaque multiband image.
 */
typedef struct AqImage AqImage;

/**
 * Opaque trained model.
 */
typedef struct AqModel AqModel;

typedef struct AqMetrics {
  double pixel_jaccard;
  double pos_accuracy;
  double neg_accuracy;
  double balanced_accuracy;
  double auc;
  double threshold;
  uint64_t tp;
  uint64_t tn;
  uint64_t fp;
  uint64_t fn_;
} AqMetrics;

typedef struct AqConsumption {
  double residential_gal_per_day;
  double nonresidential_gal_per_day;
  double total_gal_per_day;
} AqConsumption;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message for the last failed call on this thread, or null. The pointer
 * stays valid until the next failing call on the same thread.
 */
const char *aq_last_error_message(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *aq_version(void);

/**
 * # Safety
 * `path` must be a NUL-terminated string and `out` a valid pointer.
 */
enum AqStatus aq_image_load(const char *path, struct AqImage **out);

/**
 * # Safety
 * `image` must come from [`aq_image_load`] or be null.
 */
void aq_image_free(struct AqImage *image);

/**
 * Writes width, height and band count. Any output pointer may be null.
 *
 * # Safety
 * `image` must be a live handle; non-null outputs must be valid.
 */
enum AqStatus aq_image_shape(const struct AqImage *image,
                             uintptr_t *width,
                             uintptr_t *height,
                             uintptr_t *bands);

/**
 * # Safety
 * `path` must be a NUL-terminated string and `out` a valid pointer.
 */
enum AqStatus aq_model_load(const char *path, struct AqModel **out);

/**
 * # Safety
 * `model` must come from [`aq_model_load`] or be null.
 */
void aq_model_free(struct AqModel *model);

/**
 * # Safety
 * `model` must be a live handle and `out` a valid pointer.
 */
enum AqStatus aq_model_feature_dim(const struct AqModel *model, uintptr_t *out);

/**
 * Per-pixel probabilities, row-major, into `out` (at least
 * `width * height` values). A negative `k` uses the frame width recorded in
 * the model.
 *
 * # Safety
 * Handles must be live; `out` must hold `out_len` values.
 */
enum AqStatus aq_model_predict(const struct AqModel *model,
                               const struct AqImage *image,
                               int64_t k,
                               double *out,
                               uintptr_t out_len);

/**
 * Rasterizes an annotation file into `out` (`width * height` bytes): a
 * binary building mask, or the residential 128 / non-residential 255
 * palette when `stage2` is non-zero.
 *
 * # Safety
 * `path` must be a NUL-terminated string; `out` must hold `out_len` bytes.
 */
enum AqStatus aq_rasterize(const char *path,
                           uintptr_t width,
                           uintptr_t height,
                           int32_t stage2,
                           uint8_t *out,
                           uintptr_t out_len);

/**
 * Metrics of `probs >= threshold` against `truth` (non-zero = positive).
 *
 * # Safety
 * `probs` and `truth` must hold `n` values; `out` must be valid.
 */
enum AqStatus aq_metrics(const double *probs,
                         const uint8_t *truth,
                         uintptr_t n,
                         double threshold,
                         struct AqMetrics *out);

/**
 * # Safety
 * `probs` and `truth` must hold `n` values; `out` must be valid.
 */
enum AqStatus aq_auc(const double *probs, const uint8_t *truth, uintptr_t n, double *out);

/**
 * Threshold maximizing pixel Jaccard, and the Jaccard it reaches.
 *
 * # Safety
 * `probs` and `truth` must hold `n` values; outputs must be valid.
 */
enum AqStatus aq_optimal_threshold(const double *probs,
                                   const uint8_t *truth,
                                   uintptr_t n,
                                   double *out_threshold,
                                   double *out_jaccard);

/**
 * Expected residential and non-residential areas in m².
 *
 * # Safety
 * Both probability arrays must hold `n` values; outputs must be valid.
 */
enum AqStatus aq_expected_areas(const double *p_building,
                                const double *p_residential,
                                uintptr_t n,
                                double pixel_area_m2,
                                double *out_residential_m2,
                                double *out_nonresidential_m2);

/**
 * Daily consumption from floor areas in m² and per-person rates.
 *
 * # Safety
 * `out` must be valid.
 */
enum AqStatus aq_water_consumption(double area_residential_m2,
                                   double area_nonresidential_m2,
                                   double w_r_gal_per_person_day,
                                   double w_nr_gal_per_person_day,
                                   double occupancy_ft2_per_person,
                                   struct AqConsumption *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* AQUIFER_H */
