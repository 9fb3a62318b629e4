#ifndef ANWM_H
#define ANWM_H

/* Generated by cbindgen from src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum AnwmStatus {
  ANWM_STATUS_OK = 0,
  ANWM_STATUS_INVALID_ARGUMENT = 1,
  ANWM_STATUS_NULL_POINTER = 2,
  ANWM_STATUS_FORMAT = 3,
  ANWM_STATUS_VERSION = 4,
  ANWM_STATUS_IO = 5,
  ANWM_STATUS_GENERATION_STUCK = 6,
  ANWM_STATUS_TRAINING_DIVERGED = 7,
  ANWM_STATUS_RANKING_FAILED = 8,
  ANWM_STATUS_BUFFER_TOO_SMALL = 9,
  ANWM_STATUS_PANIC = 10,
} AnwmStatus;

/**
 * Opaque RGB-D frame.
 */
typedef struct AnwmFrame AnwmFrame;

/**
 * Opaque world model.
 */
typedef struct AnwmModel AnwmModel;

/**
 * Opaque procedural scene.
 */
typedef struct AnwmScene AnwmScene;

/**
 * World pose: position in meters, yaw in radians.
 */
typedef struct AnwmPose {
  double x;
  double y;
  double z;
  double yaw;
} AnwmPose;

/**
 * Body-frame motion step.
 */
typedef struct AnwmAction {
  double dx;
  double dy;
  double dz;
  double dyaw;
} AnwmAction;

typedef struct AnwmIntrinsics {
  double fx;
  double fy;
  double cx;
  double cy;
  size_t width;
  size_t height;
} AnwmIntrinsics;

typedef struct AnwmImageMetrics {
  double mse;
  double psnr;
  double ssim;
} AnwmImageMetrics;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Copies the calling thread's last error message into `buf` (NUL
 * terminated, truncated to `len`) and returns the full message length
 * excluding the terminator. `buf` may be null to query the length.
 *
 * # Safety
 * `buf` must be null or point to `len` writable bytes.
 */
size_t anwm_last_error(char *buf, size_t len);

/**
 * Library version as a static NUL-terminated string.
 */
const char *anwm_version(void);

/**
 * Pose reached from `p` by the body-frame action `a`.
 *
 * # Safety
 * Pointers must be null or valid.
 */
enum AnwmStatus anwm_compose_pose(const struct AnwmPose *p,
                                  const struct AnwmAction *a,
                                  struct AnwmPose *result);

/**
 * Action taking `from` to `to`.
 *
 * # Safety
 * Pointers must be null or valid.
 */
enum AnwmStatus anwm_action_between(const struct AnwmPose *from,
                                    const struct AnwmPose *to,
                                    struct AnwmAction *result);

/**
 * Centered pinhole camera with horizontal field of view `hfov` (radians).
 *
 * # Safety
 * `result` must be null or valid.
 */
enum AnwmStatus anwm_intrinsics_with_fov(size_t width,
                                         size_t height,
                                         double hfov,
                                         struct AnwmIntrinsics *result);

/**
 * Builds a scene; `config_toml` may be null for the default configuration.
 *
 * # Safety
 * `config_toml` must be null or a NUL-terminated string; `result` valid.
 */
enum AnwmStatus anwm_scene_build(uint64_t seed, const char *config_toml, struct AnwmScene **result);

/**
 * # Safety
 * `scene` must be null or come from [`anwm_scene_build`] and not be used afterwards.
 */
void anwm_scene_free(struct AnwmScene *scene);

/**
 * Renders the view at `p`.
 *
 * # Safety
 * Pointers must be null or valid.
 */
enum AnwmStatus anwm_render(const struct AnwmScene *scene,
                            const struct AnwmPose *p,
                            const struct AnwmIntrinsics *k,
                            struct AnwmFrame **result);

/**
 * New frame from interleaved `rgb` (3·w·h values in [0, 1]). `depth`
 * (w·h meters) and `valid` (w·h bytes, nonzero = valid) are optional;
 * without them every pixel is invalid.
 *
 * # Safety
 * Buffers must be null or hold the stated number of elements.
 */
enum AnwmStatus anwm_frame_new(size_t width,
                               size_t height,
                               const float *rgb,
                               const float *depth,
                               const uint8_t *valid,
                               struct AnwmFrame **result);

/**
 * # Safety
 * `frame` must be null or come from this library and not be used afterwards.
 */
void anwm_frame_free(struct AnwmFrame *frame);

/**
 * # Safety
 * Pointers must be null or valid.
 */
enum AnwmStatus anwm_frame_size(const struct AnwmFrame *frame, size_t *width, size_t *height);

/**
 * Copies the 3·w·h interleaved rgb values.
 *
 * # Safety
 * `buf` must hold `len` floats.
 */
enum AnwmStatus anwm_frame_rgb(const struct AnwmFrame *frame, float *buf, size_t len);

/**
 * Copies the w·h depth values (meters; meaningless where invalid).
 *
 * # Safety
 * `buf` must hold `len` floats.
 */
enum AnwmStatus anwm_frame_depth(const struct AnwmFrame *frame, float *buf, size_t len);

/**
 * Copies the w·h validity flags as 0/1 bytes.
 *
 * # Safety
 * `buf` must hold `len` bytes.
 */
enum AnwmStatus anwm_frame_valid(const struct AnwmFrame *frame, uint8_t *buf, size_t len);

/**
 * Projects `count` context frames (oldest first) observed at `poses` into
 * `target` and fuses them.
 *
 * # Safety
 * `frames` and `poses` must hold `count` elements.
 */
enum AnwmStatus anwm_future_frame_projection(const struct AnwmFrame *const *frames,
                                             const struct AnwmPose *poses,
                                             size_t count,
                                             const struct AnwmPose *target,
                                             const struct AnwmIntrinsics *k,
                                             struct AnwmFrame **result);

/**
 * MSE, PSNR and SSIM of `pred` against `gt`.
 *
 * # Safety
 * Pointers must be null or valid.
 */
enum AnwmStatus anwm_image_metrics(const struct AnwmFrame *pred,
                                   const struct AnwmFrame *gt,
                                   struct AnwmImageMetrics *result);

/**
 * Absolute translation error over `count` pose pairs.
 *
 * # Safety
 * `est` and `gt` must hold `count` poses.
 */
enum AnwmStatus anwm_ate(const struct AnwmPose *est,
                         const struct AnwmPose *gt,
                         size_t count,
                         double *result);

/**
 * Relative translation error at step interval `delta`.
 *
 * # Safety
 * `est` and `gt` must hold `count` poses.
 */
enum AnwmStatus anwm_rpe(const struct AnwmPose *est,
                         const struct AnwmPose *gt,
                         size_t count,
                         size_t delta,
                         double *result);

/**
 * Loads a checkpoint file.
 *
 * # Safety
 * `path` must be a NUL-terminated string; `result` valid.
 */
enum AnwmStatus anwm_model_load(const char *path, struct AnwmModel **result);

/**
 * # Safety
 * `model` must be null or come from [`anwm_model_load`] and not be used afterwards.
 */
void anwm_model_free(struct AnwmModel *model);

/**
 * Context size the model was trained with.
 *
 * # Safety
 * Pointers must be null or valid.
 */
enum AnwmStatus anwm_model_context(const struct AnwmModel *model, size_t *result);

/**
 * Samples the next frame from `count` past frames (oldest first, exactly
 * the model's context size), the projected prior and the action.
 *
 * # Safety
 * `past` must hold `count` frame handles; other pointers valid.
 */
enum AnwmStatus anwm_model_predict(const struct AnwmModel *model,
                                   const struct AnwmFrame *const *past,
                                   size_t count,
                                   const struct AnwmFrame *prior,
                                   const struct AnwmAction *a,
                                   uint64_t seed,
                                   struct AnwmFrame **result);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* ANWM_H */
