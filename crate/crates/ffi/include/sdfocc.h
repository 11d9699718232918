#ifndef SDFOCC_H
#define SDFOCC_H

/* Generated by cbindgen from src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

// Result code of every call.
typedef enum SdfoccStatus {
  SDFOCC_STATUS_OK = 0,
  SDFOCC_STATUS_NULL_ARGUMENT = 1,
  SDFOCC_STATUS_INVALID_STRING = 2,
  SDFOCC_STATUS_CONFIG = 3,
  SDFOCC_STATUS_IO = 4,
  SDFOCC_STATUS_PARSE = 5,
  SDFOCC_STATUS_NUMERIC = 6,
  SDFOCC_STATUS_DOMAIN = 7,
  SDFOCC_STATUS_BUFFER_SIZE = 8,
  SDFOCC_STATUS_INTERNAL = 9,
  SDFOCC_STATUS_PANIC = 10,
} SdfoccStatus;

// Loaded field checkpoint.
typedef struct SdfoccField SdfoccField;

// Labelled voxel grid, optionally with an evaluation mask.
typedef struct SdfoccOccGrid SdfoccOccGrid;

// Pinhole camera; `rotation` is the row-major world→camera matrix.
typedef struct SdfoccCamera {
  double fx;
  double fy;
  double cx;
  double cy;
  uint32_t width;
  uint32_t height;
  double rotation[9];
  double translation[3];
} SdfoccCamera;

typedef struct SdfoccOccMetrics {
  double iou;
  double precision;
  double recall;
  uint64_t tp;
  uint64_t fp;
  uint64_t fn_;
} SdfoccOccMetrics;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Library version as a static NUL-terminated string.
const char *sdfocc_version(void);

// Message of the last failed call on this thread, or NULL.
// The pointer stays valid until the next failing call on the same thread.
const char *sdfocc_last_error(void);

// Renders a synthetic dataset described by a scene TOML file into `out_dir`.
//
// # Safety
// Both arguments must be NUL-terminated strings.
enum SdfoccStatus sdfocc_synth(const char *scene_path, const char *out_dir);

// Runs a fit from a run TOML file; `resume` continues from the stored checkpoint.
//
// # Safety
// `config_path` must be a NUL-terminated string.
enum SdfoccStatus sdfocc_fit(const char *config_path, bool resume);

// Loads a field checkpoint. Free the handle with [`sdfocc_field_free`].
//
// # Safety
// `path` must be a NUL-terminated string and `out` a writable pointer.
enum SdfoccStatus sdfocc_field_load(const char *path, struct SdfoccField **out);

// # Safety
// `field` must come from [`sdfocc_field_load`] and not be used afterwards. NULL is ignored.
void sdfocc_field_free(struct SdfoccField *field);

// Grid resolution of the field volume.
//
// # Safety
// `field` must be a live handle; `out` must point to 3 writable u32.
enum SdfoccStatus sdfocc_field_resolution(const struct SdfoccField *field, uint32_t *out);

// SDF value (meters) at a world point.
//
// # Safety
// `field` must be a live handle and `out` writable.
enum SdfoccStatus sdfocc_field_sdf(const struct SdfoccField *field,
                                   double x,
                                   double y,
                                   double z,
                                   double *out);

// Occupancy labels on the field's own voxel centers, k fastest.
//
// # Safety
// `field` must be a live handle; `out` must hold `len` bytes.
enum SdfoccStatus sdfocc_field_occupancy(const struct SdfoccField *field, uint8_t *out, size_t len);

// Renders z-depth (meters, 0 on miss), rows top to bottom.
//
// # Safety
// `field` and `camera` must be valid; `out` must hold `len` floats.
enum SdfoccStatus sdfocc_field_render_depth(const struct SdfoccField *field,
                                            const struct SdfoccCamera *camera,
                                            uint32_t samples,
                                            float *out,
                                            size_t len);

// Loads a `.socg` occupancy grid. Free it with [`sdfocc_occ_free`].
//
// # Safety
// `path` must be a NUL-terminated string and `out` writable.
enum SdfoccStatus sdfocc_occ_load(const char *path, struct SdfoccOccGrid **out);

// # Safety
// `grid` must come from [`sdfocc_occ_load`] and not be used afterwards. NULL is ignored.
void sdfocc_occ_free(struct SdfoccOccGrid *grid);

// Number of voxels in the grid.
//
// # Safety
// `grid` must be a live handle and `out` writable.
enum SdfoccStatus sdfocc_occ_len(const struct SdfoccOccGrid *grid, size_t *out);

// Extracts the field's occupancy on the grid's voxels and scores it.
//
// # Safety
// Handles must be live and `out` writable.
enum SdfoccStatus sdfocc_occ_metrics(const struct SdfoccField *field,
                                     const struct SdfoccOccGrid *gt,
                                     bool use_mask,
                                     struct SdfoccOccMetrics *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* SDFOCC_H */
