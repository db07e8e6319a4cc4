#ifndef VLAPATH_H
#define VLAPATH_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result code of every fallible call.
 */
typedef enum VpStatus {
  VP_STATUS_OK = 0,
  VP_STATUS_NULL_POINTER = 1,
  VP_STATUS_INVALID_ARGUMENT = 2,
  VP_STATUS_OUT_OF_RANGE = 3,
  VP_STATUS_PARSE_ERROR = 4,
  VP_STATUS_GEOMETRY_ERROR = 5,
  VP_STATUS_RENDER_ERROR = 6,
  VP_STATUS_UTF8_ERROR = 7,
  VP_STATUS_PANIC = 8,
} VpStatus;

/**
 * Opaque 8-bit interleaved image.
 */
typedef struct VpImage VpImage;

/**
 * Opaque normalized 2D path.
 */
typedef struct VpPath VpPath;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message describing the calling thread's last failure, or NULL.
 */
const char *vp_last_error(void);

/**
 * Library version as a static string.
 */
const char *vp_version(void);

/**
 * Releases a string returned by this library. NULL is ignored.
 *
 * # Safety
 * `s` must come from this library and not be freed twice.
 */
void vp_string_free(char *s);

/**
 * Builds a path from parallel arrays. `gripper_open[i]` is nonzero for
 * open. Coordinates must lie in `[0, 1]`.
 *
 * # Safety
 * Each array must hold `n` readable elements; `out` must be writable.
 */
enum VpStatus vp_path_new(const double *xs,
                          const double *ys,
                          const uint8_t *gripper_open,
                          size_t n,
                          struct VpPath **out);

/**
 * Releases a path. NULL is ignored.
 *
 * # Safety
 * `p` must come from this library and not be freed twice.
 */
void vp_path_free(struct VpPath *p);

/**
 * Number of points, or 0 for NULL.
 *
 * # Safety
 * `p` must be NULL or a live path.
 */
size_t vp_path_len(const struct VpPath *p);

/**
 * Reads point `i`.
 *
 * # Safety
 * `p` must be a live path; the out-pointers must be writable.
 */
enum VpStatus vp_path_point(const struct VpPath *p,
                            size_t i,
                            double *x,
                            double *y,
                            uint8_t *gripper_open);

/**
 * RDP simplification that keeps both points around every gripper change.
 *
 * # Safety
 * `p` must be a live path; `out` must be writable.
 */
enum VpStatus vp_path_rdp(const struct VpPath *p, double epsilon, struct VpPath **out);

/**
 * Resamples to `n` equal arc-length points plus gripper event points.
 *
 * # Safety
 * `p` must be a live path; `out` must be writable.
 */
enum VpStatus vp_path_resample(const struct VpPath *p, size_t n, struct VpPath **out);

/**
 * Adds seeded `N(0, sigma)` noise to every coordinate, clamped to `[0, 1]`.
 *
 * # Safety
 * `p` must be a live path; `out` must be writable.
 */
enum VpStatus vp_path_add_noise(const struct VpPath *p,
                                double sigma,
                                uint64_t seed,
                                struct VpPath **out);

/**
 * Serializes a path as an `<ans>...</ans>` answer string.
 *
 * # Safety
 * `p` must be a live path; `out` must be writable.
 */
enum VpStatus vp_answer_serialize(const struct VpPath *p, char **out);

/**
 * Parses an answer string. `lenient` nonzero accepts model-style output.
 *
 * # Safety
 * `text` must be a NUL-terminated string; `out` must be writable.
 */
enum VpStatus vp_answer_parse(const char *text, int lenient, struct VpPath **out);

/**
 * Renders the fixed finetuning prompt around `instruction`.
 *
 * # Safety
 * `instruction` must be a NUL-terminated string; `out` must be writable.
 */
enum VpStatus vp_prompt_render(const char *instruction, char **out);

/**
 * Wraps `len` bytes of interleaved pixel data (3 or 6 channels).
 *
 * # Safety
 * `data` must hold `len` readable bytes; `out` must be writable.
 */
enum VpStatus vp_image_new(uint32_t width,
                           uint32_t height,
                           uint8_t channels,
                           const uint8_t *data,
                           size_t len,
                           struct VpImage **out);

/**
 * Decodes an 8-bit RGB or RGBA PNG held in memory.
 *
 * # Safety
 * `bytes` must hold `len` readable bytes; `out` must be writable.
 */
enum VpStatus vp_image_decode_png(const uint8_t *bytes, size_t len, struct VpImage **out);

/**
 * Releases an image. NULL is ignored.
 *
 * # Safety
 * `img` must come from this library and not be freed twice.
 */
void vp_image_free(struct VpImage *img);

/**
 * Width, height and channel count.
 *
 * # Safety
 * `img` must be a live image; the out-pointers must be writable.
 */
enum VpStatus vp_image_info(const struct VpImage *img,
                            uint32_t *width,
                            uint32_t *height,
                            uint8_t *channels);

/**
 * Borrowed pixel bytes, valid while the image lives. Writes the length to
 * `len`. Returns NULL for a NULL image.
 *
 * # Safety
 * `img` must be NULL or a live image; `len` must be writable or NULL.
 */
const uint8_t *vp_image_data(const struct VpImage *img, size_t *len);

/**
 * Draws `path` with a style given as JSON (NULL for the default overlay
 * style). The style's `mode` picks overlay or 6-channel concat output.
 *
 * # Safety
 * `img` and `p` must be live handles; `style_json` NULL or NUL-terminated;
 * `out` writable.
 */
enum VpStatus vp_draw(const struct VpImage *img,
                      const struct VpPath *p,
                      const char *style_json,
                      struct VpImage **out);

/**
 * Draws `path` with the default overlay style.
 *
 * # Safety
 * As for [`vp_draw`].
 */
enum VpStatus vp_draw_overlay(const struct VpImage *img,
                              const struct VpPath *p,
                              struct VpImage **out);

/**
 * Projects world point `p` to pixel `uv` through intrinsics
 * `k = {fx, fy, cx, cy}` with image size `width`×`height`, row-major
 * rotation `r[9]` and translation `t[3]`.
 *
 * # Safety
 * `k` must hold 4 doubles, `r` 9, `t` 3, `p` 3; `uv` must be writable for 2.
 */
enum VpStatus vp_project_point(const double *k,
                               uint32_t width,
                               uint32_t height,
                               const double *r,
                               const double *t,
                               const double *p,
                               double *uv);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* VLAPATH_H */
