#ifndef WPELOC_H
#define WPELOC_H

/* Generated by cbindgen; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum WpelocStatus {
  WPELOC_STATUS_OK = 0,
  WPELOC_STATUS_NULL_POINTER = -1,
  WPELOC_STATUS_INVALID_ARGUMENT = -2,
  WPELOC_STATUS_IO = -3,
  WPELOC_STATUS_DATA = -4,
  WPELOC_STATUS_PANIC = -5,
} WpelocStatus;

/**
 * WPE filter of one audio segment.
 */
typedef struct WpelocFilter WpelocFilter;

/**
 * Trained scoring model.
 */
typedef struct WpelocModel WpelocModel;

/**
 * Diarization output for one recording.
 */
typedef struct WpelocTimeline WpelocTimeline;

typedef struct WpelocPairFeatures {
  double log_alpha;
  size_t delay_bin;
  double llr_mag;
  double llr_delay;
  double fused;
} WpelocPairFeatures;

/**
 * Diarization settings. `num_speakers > 0` selects known-count clustering,
 * otherwise merging stops at `threshold`. `chunk_len <= 0` disables chunking.
 */
typedef struct WpelocDiarizeOptions {
  double window;
  double shift;
  size_t num_speakers;
  double threshold;
  double chunk_len;
} WpelocDiarizeOptions;

typedef struct WpelocDer {
  double miss;
  double false_alarm;
  double confusion;
  double total_speech;
  double der;
} WpelocDer;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message for the last failed call on this thread; empty after success.
 * The pointer stays valid until the next call on the same thread.
 */
const char *wpeloc_last_error(void);

/**
 * Loads a model saved by `wpeloc train`.
 *
 * # Safety
 * `path` must be a NUL-terminated string; `out` must be writable.
 */
enum WpelocStatus wpeloc_model_load(const char *path, struct WpelocModel **out);

/**
 * # Safety
 * `model` must come from [`wpeloc_model_load`] or be null.
 */
void wpeloc_model_free(struct WpelocModel *model);

/**
 * Estimates the WPE filter of a mono segment using the model's STFT and
 * WPE settings.
 *
 * # Safety
 * `samples` must point to `len` floats; `out` must be writable.
 */
enum WpelocStatus wpeloc_filter_from_samples(const struct WpelocModel *model,
                                             const float *samples,
                                             size_t len,
                                             uint32_t sample_rate,
                                             struct WpelocFilter **out);

/**
 * # Safety
 * `filter` must come from [`wpeloc_filter_from_samples`] or be null.
 */
void wpeloc_filter_free(struct WpelocFilter *filter);

/**
 * Same-location features and fused score for a pair of filters.
 *
 * # Safety
 * All pointers must be valid; `out` must be writable.
 */
enum WpelocStatus wpeloc_pair_score(const struct WpelocModel *model,
                                    const struct WpelocFilter *a,
                                    const struct WpelocFilter *b,
                                    struct WpelocPairFeatures *out);

/**
 * Diarizes one recording. Speech regions are given as `n_regions` pairs of
 * `starts[i]..ends[i]` in seconds.
 *
 * # Safety
 * `recording_id` must be NUL-terminated; `samples` must point to `len`
 * floats; `starts` and `ends` to `n_regions` doubles; `out` must be writable.
 */
enum WpelocStatus wpeloc_diarize(const struct WpelocModel *model,
                                 const char *recording_id,
                                 const float *samples,
                                 size_t len,
                                 uint32_t sample_rate,
                                 const double *starts,
                                 const double *ends,
                                 size_t n_regions,
                                 const struct WpelocDiarizeOptions *options,
                                 struct WpelocTimeline **out);

/**
 * Number of segments in a timeline; 0 for null.
 *
 * # Safety
 * `timeline` must be valid or null.
 */
size_t wpeloc_timeline_len(const struct WpelocTimeline *timeline);

/**
 * Segment `index`: times in seconds, label borrowed from the handle.
 *
 * # Safety
 * `timeline` must be valid; output pointers must be writable.
 */
enum WpelocStatus wpeloc_timeline_segment(const struct WpelocTimeline *timeline,
                                          size_t index,
                                          double *start,
                                          double *end,
                                          const char **label);

/**
 * # Safety
 * `timeline` must be valid; `path` NUL-terminated.
 */
enum WpelocStatus wpeloc_timeline_write_rttm(const struct WpelocTimeline *timeline,
                                             const char *path);

/**
 * # Safety
 * `timeline` must come from [`wpeloc_diarize`] or be null.
 */
void wpeloc_timeline_free(struct WpelocTimeline *timeline);

/**
 * DER pooled over every recording in the reference RTTM file; recordings
 * missing from the hypothesis count as all missed. `chunk_len <= 0` scores
 * whole recordings.
 *
 * # Safety
 * Paths must be NUL-terminated; `out` must be writable.
 */
enum WpelocStatus wpeloc_der_files(const char *reference,
                                   const char *hypothesis,
                                   double chunk_len,
                                   struct WpelocDer *out);

/**
 * Static description of a status code.
 */
const char *wpeloc_status_name(enum WpelocStatus status);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* WPELOC_H */
