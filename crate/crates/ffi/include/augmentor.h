#ifndef AUGMENTOR_H
#define AUGMENTOR_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

// Result of every call.
typedef enum AugStatus {
  AUG_STATUS_OK = 0,
  // A required pointer argument was null.
  AUG_STATUS_NULL_ARGUMENT = 1,
  // A string argument was not valid UTF-8.
  AUG_STATUS_INVALID_STRING = 2,
  // A numeric argument was out of range.
  AUG_STATUS_INVALID_ARGUMENT = 3,
  // Configuration JSON was malformed or violated a range.
  AUG_STATUS_CONFIG = 4,
  // The rig list or a calibration could not be loaded.
  AUG_STATUS_RIG = 5,
  // A geometric operation had no valid result.
  AUG_STATUS_GEOMETRY = 6,
  // A file could not be read or written.
  AUG_STATUS_IO = 7,
  // Any other pipeline failure.
  AUG_STATUS_PIPELINE = 8,
  // The output buffer is too small; the required size was reported.
  AUG_STATUS_BUFFER_TOO_SMALL = 9,
  // An internal panic was caught at the boundary.
  AUG_STATUS_PANIC = 10,
} AugStatus;

// Camera intrinsics and ground plane.
typedef struct AugCalibration AugCalibration;

// Augmentation parameters.
typedef struct AugConfig AugConfig;

// Record of a finished augmentation run.
typedef struct AugManifest AugManifest;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Library version as a static NUL-terminated string.
const char *aug_version(void);

// Copies the calling thread's last error message into `buf`.
//
// Returns the number of bytes the full message needs, including the NUL.
// The message is truncated to `capacity - 1` bytes when the buffer is short.
// An empty string means the last call succeeded.
//
// # Safety
// `buf` must be null or valid for `capacity` bytes.
size_t aug_last_error(char *buf, size_t capacity);

// Parses a calibration JSON document into a new handle.
//
// # Safety
// `json` must be a NUL-terminated string; `out` must be writable.
enum AugStatus aug_calibration_from_json(const char *json, struct AugCalibration **out);

// Releases a calibration handle. Null is ignored.
//
// # Safety
// `calib` must come from `aug_calibration_from_json` and not be used again.
void aug_calibration_free(struct AugCalibration *calib);

// Projects a camera-space point `point[3]` to pixel `out_pixel[2]`.
//
// # Safety
// Pointers must be valid for the stated element counts.
enum AugStatus aug_project(const struct AugCalibration *calib,
                           const double *point,
                           double *out_pixel);

// Intersects the viewing ray of `pixel[2]` with the ground plane.
//
// # Safety
// Pointers must be valid for the stated element counts.
enum AugStatus aug_backproject(const struct AugCalibration *calib,
                               const double *pixel,
                               double *out_point);

// Writes the ground-to-image homography, row-major, into `out_matrix[9]`.
//
// # Safety
// `out_matrix` must be valid for nine doubles.
enum AugStatus aug_ground_homography(const struct AugCalibration *calib, double *out_matrix);

// Creates a configuration holding the published defaults.
//
// # Safety
// `out` must be writable.
enum AugStatus aug_config_default(struct AugConfig **out);

// Parses configuration JSON; absent keys take their defaults.
//
// # Safety
// `json` must be a NUL-terminated string; `out` must be writable.
enum AugStatus aug_config_from_json(const char *json, struct AugConfig **out);

// Loads a configuration file; relative paths inside resolve against it.
//
// # Safety
// `file` must be a NUL-terminated string; `out` must be writable.
enum AugStatus aug_config_load(const char *file, struct AugConfig **out);

// # Safety
// `config` must be a live handle.
enum AugStatus aug_config_set_seed(struct AugConfig *config, uint64_t seed);

// Sets the per-composite car cap; rejected values leave the config as is.
//
// # Safety
// `config` must be a live handle.
enum AugStatus aug_config_set_max_cars(struct AugConfig *config, uint32_t max_cars);

// Serializes the configuration as JSON into `buf`.
//
// `required` (optional) receives the size including the NUL. Returns
// `BufferTooSmall` when `capacity` is short.
//
// # Safety
// `buf` must be null or valid for `capacity` bytes; `required` may be null.
enum AugStatus aug_config_to_json(const struct AugConfig *config,
                                  char *buf,
                                  size_t capacity,
                                  size_t *required);

// # Safety
// `config` must come from an `aug_config_*` constructor and not be used again.
void aug_config_free(struct AugConfig *config);

// Runs the full augmentation over the rigs listed in `rigs_path`.
//
// `threads` is the worker count, 0 for the default pool. Outputs do not
// depend on it. `out_manifest` may be null when the caller only needs the
// files on disk.
//
// # Safety
// Strings must be NUL-terminated; `out_manifest` must be null or writable.
enum AugStatus aug_augment(const struct AugConfig *config,
                           const char *rigs_path,
                           const char *out_dir,
                           size_t threads,
                           struct AugManifest **out_manifest);

// Number of composites recorded in the manifest, 0 for null.
//
// # Safety
// `manifest` must be null or a live handle.
size_t aug_manifest_len(const struct AugManifest *manifest);

// # Safety
// `manifest` must come from `aug_augment` and not be used again.
void aug_manifest_free(struct AugManifest *manifest);

// Dataset statistics for an output directory or manifest file, as JSON.
//
// # Safety
// `dataset` must be NUL-terminated; `buf` must be null or valid for
// `capacity` bytes; `required` may be null.
enum AugStatus aug_stats_json(const char *dataset, char *buf, size_t capacity, size_t *required);

// Writes `<rig>_birdseye.png` and `<rig>_birdseye.json` for one rig into
// `out_dir`, covering the default ground extent.
//
// # Safety
// Strings must be NUL-terminated.
enum AugStatus aug_export_birdseye(const char *rigs_path,
                                   const char *rig_id,
                                   double meters_per_pixel,
                                   const char *out_dir);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* AUGMENTOR_H */
