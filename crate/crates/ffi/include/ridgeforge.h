#ifndef RIDGEFORGE_H
#define RIDGEFORGE_H

/* Generated by cbindgen from crates/ffi; do not edit by hand. */

#include <stdarg.h>
#include <stdbool.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Status codes returned by every fallible entry point.
 */
typedef enum RfStatus {
  /**
   * Success.
   */
  RF_OK = 0,
  /**
   * A required pointer argument was NULL.
   */
  RF_NULL_POINTER = 1,
  /**
   * A string argument was not valid UTF-8.
   */
  RF_INVALID_UTF8 = 2,
  /**
   * File could not be read or written.
   */
  RF_IO_ERROR = 3,
  /**
   * Input file or buffer failed to parse.
   */
  RF_PARSE_ERROR = 4,
  /**
   * The operation is undefined on this input (degenerate geometry,
   * empty foreground, indeterminate pose, ...).
   */
  RF_DOMAIN_ERROR = 5,
  /**
   * Internal invariant violation caught at the boundary.
   */
  RF_INTERNAL_ERROR = 6,
} RfStatus;

/**
 * Opaque 3D point cloud handle.
 */
typedef struct RfCloud RfCloud;

/**
 * Opaque raster image handle.
 */
typedef struct RfRaster RfRaster;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Copy the message of the most recent error on this thread into `buf`
 * (NUL-terminated, truncated to `cap`). Returns the full message length in
 * bytes, excluding the terminator; 0 means no error has been recorded.
 *
 * # Safety
 * `buf`, when non-NULL, must have room for `cap` bytes.
 */
uintptr_t rf_last_error_message(char *buf, uintptr_t cap);

/**
 * Load a cloud from an XYZ or PLY file (chosen by extension).
 *
 * # Safety
 * `path` must be a NUL-terminated string; `out` must be a valid pointer.
 */
enum RfStatus rf_cloud_read(const char *path, struct RfCloud **out);

/**
 * Build a cloud from `n` interleaved xyz triples (3*n doubles).
 *
 * # Safety
 * `xyz` must point to at least `3 * n` doubles; `out` must be valid.
 */
enum RfStatus rf_cloud_create(const double *xyz, uintptr_t n, struct RfCloud **out);

/**
 * Number of points, or 0 for NULL.
 *
 * # Safety
 * `cloud`, when non-NULL, must be a live handle from this library.
 */
uintptr_t rf_cloud_point_count(const struct RfCloud *cloud);

/**
 * Copy up to `cap` points as interleaved xyz triples into `out_xyz`.
 * Returns the number of points copied.
 *
 * # Safety
 * `out_xyz` must have room for `3 * cap` doubles.
 */
uintptr_t rf_cloud_points(const struct RfCloud *cloud, double *out_xyz, uintptr_t cap);

/**
 * Release a cloud handle.
 *
 * # Safety
 * `cloud` must come from this library and not be freed twice.
 */
void rf_cloud_free(struct RfCloud *cloud);

/**
 * Unwrap a cloud into a rolled-equivalent image. Pass 0 for `radius` or
 * `pitch` to use the defaults (0.6 mm, 0.05 mm).
 *
 * # Safety
 * `out` must be a valid pointer.
 */
enum RfStatus rf_unwrap(const struct RfCloud *cloud,
                        double radius,
                        double pitch,
                        struct RfRaster **out);

/**
 * Raster width in pixels, or 0 for NULL.
 *
 * # Safety
 * `raster`, when non-NULL, must be a live handle from this library.
 */
uintptr_t rf_raster_width(const struct RfRaster *raster);

/**
 * Raster height in pixels, or 0 for NULL.
 *
 * # Safety
 * `raster`, when non-NULL, must be a live handle from this library.
 */
uintptr_t rf_raster_height(const struct RfRaster *raster);

/**
 * Pixel pitch in mm, or 0 for NULL.
 *
 * # Safety
 * `raster`, when non-NULL, must be a live handle from this library.
 */
double rf_raster_pitch(const struct RfRaster *raster);

/**
 * Copy the gray channel, row-major, background pixels as 0. Returns the
 * number of values copied (min of `cap` and width*height).
 *
 * # Safety
 * `out` must have room for `cap` doubles.
 */
uintptr_t rf_raster_gray(const struct RfRaster *raster, double *out, uintptr_t cap);

/**
 * Release a raster handle.
 *
 * # Safety
 * `raster` must come from this library and not be freed twice.
 */
void rf_raster_free(struct RfRaster *raster);

/**
 * Register cloud A onto cloud B through `n` correspondence pairs
 * (interleaved ax,ay,az,bx,by,bz per pair) and fuse them along a
 * minimum-penalty seam. On success `out` owns the merged cloud and
 * `out_disagreement`, if non-NULL, receives the post-registration mean
 * overlap disagreement in mm.
 *
 * # Safety
 * `pairs` must point to `6 * n` doubles; `out` must be valid.
 */
enum RfStatus rf_fuse(const struct RfCloud *cloud_a,
                      const struct RfCloud *cloud_b,
                      const double *pairs,
                      uintptr_t n,
                      struct RfCloud **out,
                      double *out_disagreement);

/**
 * Fit the canonical pose of a finger cloud. Writes a row-major 3x3
 * rotation and a translation such that `R*p + t` is the normalized pose.
 * `out_roll_indeterminate`, if non-NULL, is set to 1 when the cross-section
 * is too circular to define roll (the rotation then fixes roll to zero).
 * Pass 0 for `slice_thickness` to use the default (1.0 mm).
 *
 * # Safety
 * `out_rotation` must hold 9 doubles and `out_translation` 3.
 */
enum RfStatus rf_canonical_pose(const struct RfCloud *cloud,
                                double slice_thickness,
                                double *out_rotation,
                                double *out_translation,
                                int32_t *out_roll_indeterminate);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* RIDGEFORGE_H */
