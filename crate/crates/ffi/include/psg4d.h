#ifndef PSG4D_H
#define PSG4D_H

#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>

typedef enum Psg4dStatus {
  PSG4D_STATUS_OK = 0,
  PSG4D_STATUS_NULL_POINTER = 1,
  PSG4D_STATUS_INVALID_UTF8 = 2,
  /**
   * Malformed document, config or argument.
   */
  PSG4D_STATUS_INVALID_INPUT = 3,
  PSG4D_STATUS_IO = 4,
  /**
   * The text backend failed.
   */
  PSG4D_STATUS_BACKEND = 5,
  /**
   * A Rust panic was caught at the boundary.
   */
  PSG4D_STATUS_INTERNAL = 6,
} Psg4dStatus;

/**
 * Accumulates prediction/gold pairs and scores them.
 */
typedef struct Psg4dEvaluator Psg4dEvaluator;

/**
 * A loaded scene graph with its document metadata.
 */
typedef struct Psg4dScene Psg4dScene;

/**
 * Result of one chained-inference run.
 */
typedef struct Psg4dTranscript Psg4dTranscript;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread, or null. Owned by the
 * library; valid until the next call.
 */
const char *psg4d_last_error(void);

/**
 * Library version, a static string.
 */
const char *psg4d_version(void);

/**
 * Frees a string returned by this library. Null is ignored.
 *
 * # Safety
 * `s` is null or was returned by this library and not yet freed.
 */
void psg4d_string_free(char *s);

/**
 * Loads an annotation document from a file.
 *
 * # Safety
 * `path` is a NUL-terminated string; `out` is valid for writes.
 */
enum Psg4dStatus psg4d_scene_load(const char *path, struct Psg4dScene **out);

/**
 * Parses an annotation document from JSON text.
 *
 * # Safety
 * `json` is a NUL-terminated string; `out` is valid for writes.
 */
enum Psg4dStatus psg4d_scene_from_json(const char *json, struct Psg4dScene **out);

/**
 * # Safety
 * `scene` is a live handle; `objects` and `relations` are valid for writes.
 */
enum Psg4dStatus psg4d_scene_counts(const struct Psg4dScene *scene,
                                    size_t *objects,
                                    size_t *relations);

/**
 * # Safety
 * `scene` is null or a handle not yet freed.
 */
void psg4d_scene_free(struct Psg4dScene *scene);

/**
 * Creates an evaluator. `ks` must be strictly ascending and positive.
 *
 * # Safety
 * `ks` is valid for `n_ks` reads; `out` is valid for writes.
 */
enum Psg4dStatus psg4d_evaluator_new(double viou_threshold,
                                     double temporal_iou_threshold,
                                     bool grounded,
                                     const size_t *ks,
                                     size_t n_ks,
                                     struct Psg4dEvaluator **out);

/**
 * Adds one video. Prediction relations are ranked by confidence. Both
 * scenes are copied.
 *
 * # Safety
 * All handles are live.
 */
enum Psg4dStatus psg4d_evaluator_add(struct Psg4dEvaluator *ev,
                                     const struct Psg4dScene *pred,
                                     const struct Psg4dScene *gold);

/**
 * R@k and mR@k in percent over the videos added so far. `k` must be one
 * of the configured cutoffs.
 *
 * # Safety
 * `ev` is live; `recall` and `mean_recall` are valid for writes.
 */
enum Psg4dStatus psg4d_evaluator_recall(const struct Psg4dEvaluator *ev,
                                        size_t k,
                                        double *recall,
                                        double *mean_recall);

/**
 * # Safety
 * `ev` is null or a handle not yet freed.
 */
void psg4d_evaluator_free(struct Psg4dEvaluator *ev);

/**
 * Volumetric IoU of two dense row-major `frames x height x width` masks
 * (nonzero bytes are foreground).
 *
 * # Safety
 * `a` and `b` are valid for `frames * height * width` reads; `out` is
 * valid for writes.
 */
enum Psg4dStatus psg4d_tube_iou(size_t frames,
                                size_t height,
                                size_t width,
                                const uint8_t *a,
                                const uint8_t *b,
                                double *out);

/**
 * Parses one stage output (1..=4) and returns `{"items": .., "warnings": ..}`
 * as JSON. Never fails on malformed text.
 *
 * # Safety
 * `input` is a NUL-terminated string; `out_json` is valid for writes.
 */
enum Psg4dStatus psg4d_parse_stage(uint8_t stage, const char *input, char **out_json);

/**
 * Runs chained inference against scripted responses, one per request.
 *
 * # Safety
 * `video_id` is a NUL-terminated string; `responses` is valid for
 * `n_responses` reads of NUL-terminated strings; `out` is valid for writes.
 */
enum Psg4dStatus psg4d_infer_mock(const char *video_id,
                                  double duration,
                                  const char *const *responses,
                                  size_t n_responses,
                                  size_t examples,
                                  struct Psg4dTranscript **out);

/**
 * Number of validated final quintuples.
 *
 * # Safety
 * `t` is live; `count` is valid for writes.
 */
enum Psg4dStatus psg4d_transcript_quintuples(const struct Psg4dTranscript *t, size_t *count);

/**
 * The transcript as JSON; free with [`psg4d_string_free`].
 *
 * # Safety
 * `t` is live; `out_json` is valid for writes.
 */
enum Psg4dStatus psg4d_transcript_to_json(const struct Psg4dTranscript *t, char **out_json);

/**
 * # Safety
 * `t` is null or a handle not yet freed.
 */
void psg4d_transcript_free(struct Psg4dTranscript *t);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* PSG4D_H */
