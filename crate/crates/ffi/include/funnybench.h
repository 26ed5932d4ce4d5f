#ifndef FUNNYBENCH_H
#define FUNNYBENCH_H

#include <stddef.h>
#include <stdint.h>

/**
 * Result code of every fallible call.
 */
typedef enum {
  FB_STATUS_OK = 0,
  FB_STATUS_NULL_POINTER = 1,
  FB_STATUS_INVALID_ARGUMENT = 2,
  FB_STATUS_IO = 3,
  FB_STATUS_FORMAT = 4,
  FB_STATUS_EXTERNAL = 5,
  FB_STATUS_UNSUPPORTED = 6,
  FB_STATUS_DIVERGENCE = 7,
  FB_STATUS_BUFFER_TOO_SMALL = 8,
  FB_STATUS_PANIC = 9,
} FbStatus;

/**
 * Explanation methods, in the order of the library's method list.
 */
typedef enum {
  FB_METHOD_IXG = 0,
  FB_METHOD_IG = 1,
  FB_METHOD_IG_ABS = 2,
  FB_METHOD_GRAD_CAM = 3,
  FB_METHOD_RISE = 4,
  FB_METHOD_LIME = 5,
  FB_METHOD_RANDOM = 6,
} FbMethod;

/**
 * Opaque class space.
 */
typedef struct FbClassSpace FbClassSpace;

/**
 * Opaque reference CNN.
 */
typedef struct FbModel FbModel;

/**
 * Protocol scores of one evaluation run.
 */
typedef struct {
  double accuracy;
  double background_independence;
  double csdc;
  double pc;
  double dc;
  double distractibility;
  double single_deletion;
  double target_sensitivity;
  double completeness;
  double correctness;
  double contrastivity;
  double mean_explainability;
  double threshold;
} FbScores;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Library version as a static NUL-terminated string.
 */
const char *fb_version(void);

/**
 * Copies the calling thread's last error message into `buf` (truncated,
 * always NUL-terminated when `len > 0`) and returns its full length in
 * bytes, or 0 when there is none.
 *
 * # Safety
 * `buf` must be null or point to `len` writable bytes.
 */
uintptr_t fb_last_error(char *buf, uintptr_t len);

/**
 * Loads weights written by `funnybench train`.
 *
 * # Safety
 * `path` must be a NUL-terminated string; `out` must be writable.
 */
FbStatus fb_model_load(const char *path, FbModel **out);

/**
 * A freshly initialised, untrained CNN. `height` and `width` must be
 * positive multiples of 4.
 *
 * # Safety
 * `out` must be writable.
 */
FbStatus fb_model_new(uintptr_t height,
                      uintptr_t width,
                      uintptr_t num_classes,
                      uint64_t seed,
                      FbModel **out);

/**
 * # Safety
 * `model` must come from this library and not be used afterwards.
 */
void fb_model_free(FbModel *model);

/**
 * Input resolution and class count of a model.
 *
 * # Safety
 * `model` must be a live handle; the out pointers may be null.
 */
FbStatus fb_model_shape(const FbModel *model,
                        uintptr_t *height,
                        uintptr_t *width,
                        uintptr_t *num_classes);

/**
 * Class logits for an `height × width × 3` float image in [0, 1], row-major.
 *
 * # Safety
 * `pixels` must hold `height*width*3` floats; `logits` must hold `n_logits`.
 */
FbStatus fb_model_predict(const FbModel *model,
                          const float *pixels,
                          uintptr_t height,
                          uintptr_t width,
                          double *logits,
                          uintptr_t n_logits);

/**
 * Explains `target` with default method settings (`seed` drives the
 * stochastic methods). Writes one value per pixel into `map`; binary
 * methods write 0 or 1.
 *
 * # Safety
 * `pixels` must hold `height*width*3` floats; `map` must hold `map_len`.
 */
FbStatus fb_explain(const FbModel *model,
                    FbMethod method,
                    const float *pixels,
                    uintptr_t height,
                    uintptr_t width,
                    uintptr_t target,
                    uint64_t seed,
                    double *map,
                    uintptr_t map_len);

/**
 * The 50-class space for `seed`.
 *
 * # Safety
 * `out` must be writable.
 */
FbStatus fb_class_space_new(uint64_t seed, FbClassSpace **out);

/**
 * # Safety
 * `space` must come from this library and not be used afterwards.
 */
void fb_class_space_free(FbClassSpace *space);

/**
 * Number of classes in a space.
 *
 * # Safety
 * `space` must be a live handle.
 */
uintptr_t fb_class_space_len(const FbClassSpace *space);

/**
 * Minimal sufficient part sets of `class` as bit masks (bit i = part slot
 * with label i+1). Writes up to `cap` masks and stores the total count in
 * `count`.
 *
 * # Safety
 * `masks` must hold `cap` bytes (may be null when `cap` is 0); `count` must
 * be writable.
 */
FbStatus fb_sufficient_sets(const FbClassSpace *space,
                            uintptr_t class_id,
                            uint8_t *masks,
                            uintptr_t cap,
                            uintptr_t *count);

/**
 * Samples a scene of `class_id` and renders it at `resolution`. Writes
 * `resolution²·3` floats to `pixels` and, when non-null, `resolution²`
 * part labels to `labels`.
 *
 * # Safety
 * Buffers must be large enough for the given resolution.
 */
FbStatus fb_render_sample(const FbClassSpace *space,
                          uintptr_t class_id,
                          uint64_t seed,
                          uintptr_t resolution,
                          float *pixels,
                          uint16_t *labels);

/**
 * Evaluates `method` on the first `limit` test samples of a generated
 * dataset (0 means all) with default settings.
 *
 * # Safety
 * `dataset_dir` must be a NUL-terminated path; `scores` must be writable.
 */
FbStatus fb_evaluate(const FbModel *model,
                     const char *dataset_dir,
                     FbMethod method,
                     uintptr_t limit,
                     uint64_t seed,
                     FbScores *scores);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* FUNNYBENCH_H */
