#ifndef TURBSPLAT_H
#define TURBSPLAT_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

// Result of every fallible call.
typedef enum TurbsplatStatus {
  TURBSPLAT_STATUS_OK = 0,
  TURBSPLAT_STATUS_INVALID_ARGUMENT = 1,
  TURBSPLAT_STATUS_IO = 2,
  TURBSPLAT_STATUS_NUMERICAL = 3,
  TURBSPLAT_STATUS_DIMENSION_MISMATCH = 4,
  TURBSPLAT_STATUS_UNSUPPORTED = 5,
  TURBSPLAT_STATUS_NULL_POINTER = 6,
  TURBSPLAT_STATUS_PANIC = 7,
} TurbsplatStatus;

typedef struct TurbsplatBasis TurbsplatBasis;

typedef struct TurbsplatFlow TurbsplatFlow;

typedef struct TurbsplatImage TurbsplatImage;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message for the last failure on this thread; empty if none. The pointer
// stays valid until the next failing call on the same thread.
const char *turbsplat_last_error(void);

// Copy `width * height * channels` planar samples into a new image.
//
// # Safety
// `data` must point to that many readable floats; `out` must be writable.
enum TurbsplatStatus turbsplat_image_new(size_t width,
                                         size_t height,
                                         size_t channels,
                                         const float *data,
                                         struct TurbsplatImage **out);

// Read a `.png` or `.f32` image.
//
// # Safety
// `path` must be a NUL-terminated string; `out` must be writable.
enum TurbsplatStatus turbsplat_image_read(const char *path, struct TurbsplatImage **out);

// Write an image; the extension picks the format.
//
// # Safety
// `img` must be a live handle and `path` a NUL-terminated string.
enum TurbsplatStatus turbsplat_image_write(const struct TurbsplatImage *img, const char *path);

// # Safety
// `img` must be a live handle or null.
size_t turbsplat_image_width(const struct TurbsplatImage *img);

// # Safety
// `img` must be a live handle or null.
size_t turbsplat_image_height(const struct TurbsplatImage *img);

// # Safety
// `img` must be a live handle or null.
size_t turbsplat_image_channels(const struct TurbsplatImage *img);

// Planar samples, valid while the handle lives.
//
// # Safety
// `img` must be a live handle or null.
const float *turbsplat_image_data(const struct TurbsplatImage *img);

// # Safety
// `img` must come from this library and not be used afterwards.
void turbsplat_image_free(struct TurbsplatImage *img);

// PSNR in dB, capped at 99 for identical images.
//
// # Safety
// `a` and `b` must be live handles; `out` must be writable.
enum TurbsplatStatus turbsplat_psnr(const struct TurbsplatImage *a,
                                    const struct TurbsplatImage *b,
                                    double *out);

// Mean SSIM over 11x11 Gaussian windows.
//
// # Safety
// `a` and `b` must be live handles; `out` must be writable.
enum TurbsplatStatus turbsplat_ssim(const struct TurbsplatImage *a,
                                    const struct TurbsplatImage *b,
                                    double *out);

// Mean Sobel gradient magnitude of the luma.
//
// # Safety
// `img` must be a live handle; `out` must be writable.
enum TurbsplatStatus turbsplat_gcl(const struct TurbsplatImage *img, double *out);

// Isoplanatic angle (rad) for a horizontal path of constant turbulence.
//
// # Safety
// `out` must be writable.
enum TurbsplatStatus turbsplat_isoplanatic_angle(double r0, double path_length, double *out);

// Region grid for square isoplanatic patches of angle `theta` over a field
// of view `fov` (rad) imaged on `height x width` pixels. `per_axis` selects
// `fov / max(height, width)` as the per-pixel angle instead of
// `fov / (height * width)`.
//
// # Safety
// `patch_pixels`, `grid_w` and `grid_h` must be writable.
enum TurbsplatStatus turbsplat_region_grid(double fov,
                                           size_t height,
                                           size_t width,
                                           double theta,
                                           bool per_axis,
                                           double *patch_pixels,
                                           size_t *grid_w,
                                           size_t *grid_h);

// Dense flow with `reference(p + f(p)) ~ target(p)`, default settings.
//
// # Safety
// Both images must be live handles; `out` must be writable.
enum TurbsplatStatus turbsplat_flow_estimate(const struct TurbsplatImage *reference,
                                             const struct TurbsplatImage *target,
                                             struct TurbsplatFlow **out);

// Root-mean-square displacement, px.
//
// # Safety
// `flow` must be a live handle or null.
double turbsplat_flow_rms(const struct TurbsplatFlow *flow);

// Write a `.flo32` flow file.
//
// # Safety
// `flow` must be a live handle and `path` a NUL-terminated string.
enum TurbsplatStatus turbsplat_flow_write(const struct TurbsplatFlow *flow, const char *path);

// # Safety
// `flow` must come from this library and not be used afterwards.
void turbsplat_flow_free(struct TurbsplatFlow *flow);

// Tilt-corrected reference built from `n` frames around frame `ref_index`.
//
// # Safety
// `frames` must point to `n` live image handles; `out` must be writable.
enum TurbsplatStatus turbsplat_correct_reference(const struct TurbsplatImage *const *frames,
                                                 size_t n,
                                                 size_t ref_index,
                                                 struct TurbsplatImage **out);

// Load a basis written by the `basis` command.
//
// # Safety
// `path` must be a NUL-terminated string; `out` must be writable.
enum TurbsplatStatus turbsplat_basis_load(const char *path, struct TurbsplatBasis **out);

// # Safety
// `basis` must be a live handle or null.
size_t turbsplat_basis_n_components(const struct TurbsplatBasis *basis);

// # Safety
// `basis` must come from this library and not be used afterwards.
void turbsplat_basis_free(struct TurbsplatBasis *basis);

// Full restoration of `n` frames. `config_json` holds the `restore`
// section of a pipeline config, or null for defaults. `final_loss` may be
// null.
//
// # Safety
// `frames` must point to `n` live image handles, `basis` must be live,
// `config_json` null or NUL-terminated, and `out` writable.
enum TurbsplatStatus turbsplat_restore(const struct TurbsplatImage *const *frames,
                                       size_t n,
                                       const struct TurbsplatBasis *basis,
                                       const char *config_json,
                                       struct TurbsplatImage **out,
                                       double *final_loss);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* TURBSPLAT_H */
