#ifndef WAVEPOLYP_H
#define WAVEPOLYP_H

/* Generated by cbindgen. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Sub-band selector for [`wp_report_ci`].
 */
typedef enum WpBand {
  WP_BAND_LL = 0,
  WP_BAND_HL = 1,
  WP_BAND_LH = 2,
  WP_BAND_HH = 3,
} WpBand;

/**
 * Channel selector for [`wp_report_ci`].
 */
typedef enum WpModality {
  WP_MODALITY_GRAY = 0,
  WP_MODALITY_R = 1,
  WP_MODALITY_G = 2,
  WP_MODALITY_B = 3,
  WP_MODALITY_RGB_MEAN = 4,
} WpModality;

/**
 * Result code of every fallible call.
 */
typedef enum WpStatus {
  WP_STATUS_OK = 0,
  WP_STATUS_NULL_POINTER = 1,
  WP_STATUS_INVALID_ARGUMENT = 2,
  WP_STATUS_DIMENSION = 3,
  WP_STATUS_NON_FINITE = 4,
  WP_STATUS_IO = 5,
  WP_STATUS_CHECKPOINT = 6,
  WP_STATUS_TOPOLOGY = 7,
  WP_STATUS_PANIC = 8,
} WpStatus;

/**
 * Opaque segmentation model.
 */
typedef struct WpModel WpModel;

/**
 * Opaque contrast report.
 */
typedef struct WpReport WpReport;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread, or null. The pointer is
 * valid until the next call on this thread.
 */
const char *wp_last_error(void);

/**
 * Library version as a static nul-terminated string.
 */
const char *wp_version(void);

/**
 * One level of the orthonormal Haar transform of a `rows × cols` matrix.
 * Each output buffer holds `rows/2 × cols/2` values.
 */
enum WpStatus wp_haar_dwt2(const double *input,
                           uintptr_t rows,
                           uintptr_t cols,
                           double *ll,
                           double *hl,
                           double *lh,
                           double *hh);

/**
 * Inverse of [`wp_haar_dwt2`]; `rows` and `cols` are the sub-band sizes and
 * `output` holds `2·rows × 2·cols` values.
 */
enum WpStatus wp_haar_idwt2(const double *ll,
                            const double *hl,
                            const double *lh,
                            const double *hh,
                            uintptr_t rows,
                            uintptr_t cols,
                            double *output);

/**
 * Contrast index of `coeffs` under `mask`.
 */
enum WpStatus wp_contrast_index(const double *coeffs,
                                const uint8_t *mask_bits,
                                uintptr_t rows,
                                uintptr_t cols,
                                double epsilon,
                                double *out);

enum WpStatus wp_dice(const uint8_t *pred,
                      const uint8_t *gt,
                      uintptr_t rows,
                      uintptr_t cols,
                      double *out);

enum WpStatus wp_iou(const uint8_t *pred,
                     const uint8_t *gt,
                     uintptr_t rows,
                     uintptr_t cols,
                     double *out);

/**
 * Contrast report of one image and mask over `levels` decomposition levels.
 */
enum WpStatus wp_analyze_pair(const double *rgb,
                              const uint8_t *mask_bits,
                              uintptr_t rows,
                              uintptr_t cols,
                              uintptr_t levels,
                              double epsilon,
                              struct WpReport **out);

/**
 * One contrast value of a report. `band` is a [`WpBand`] and `modality` a
 * [`WpModality`]; the LL band exists only at the deepest level.
 */
enum WpStatus wp_report_ci(const struct WpReport *report,
                           uintptr_t level,
                           uint32_t band,
                           uint32_t modality,
                           double *out);

/**
 * The report as CSV. Release the string with [`wp_string_free`].
 */
enum WpStatus wp_report_csv(const struct WpReport *report, char **out);

void wp_report_free(struct WpReport *report);

void wp_string_free(char *s);

/**
 * Freshly initialised model with the default topology. `mode` is one of
 * `full`, `rgb_only`, `add_fusion`, `no_cdf`.
 */
enum WpStatus wp_model_new(const char *mode, uint64_t seed, struct WpModel **out);

/**
 * Model from a checkpoint written by `wavepolyp train` or [`wp_model_save`].
 */
enum WpStatus wp_model_load(const char *path, struct WpModel **out);

enum WpStatus wp_model_save(const struct WpModel *model, const char *path);

/**
 * Number of scalar parameters, or 0 for a null handle.
 */
uintptr_t wp_model_param_count(const struct WpModel *model);

/**
 * Side lengths accepted by [`wp_model_predict`] must be multiples of this;
 * 0 for a null handle.
 */
uintptr_t wp_model_size_divisor(const struct WpModel *model);

/**
 * Polyp probability per pixel, written to `probs` (`rows × cols` values).
 */
enum WpStatus wp_model_predict(const struct WpModel *model,
                               const double *rgb,
                               uintptr_t rows,
                               uintptr_t cols,
                               double *probs);

void wp_model_free(struct WpModel *model);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* WAVEPOLYP_H */
