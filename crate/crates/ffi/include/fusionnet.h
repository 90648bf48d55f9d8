#ifndef FUSIONNET_H
#define FUSIONNET_H

#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>

typedef enum FnStatus {
  FN_STATUS_OK = 0,
  FN_STATUS_NULL_POINTER = 1,
  FN_STATUS_INVALID_ARGUMENT = 2,
  FN_STATUS_PARSE = 3,
  FN_STATUS_INVALID_MESH = 4,
  FN_STATUS_SHAPE = 5,
  FN_STATUS_WEIGHTS = 6,
  FN_STATUS_BUFFER_TOO_SMALL = 7,
  FN_STATUS_INTERNAL = 8,
} FnStatus;

typedef struct FnMesh FnMesh;

typedef struct FnNetwork FnNetwork;

typedef struct FnVoxelGrid FnVoxelGrid;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Copies the last error message of this thread into `buf` (NUL-terminated,
// truncated to `cap`) and returns the full message length.
//
// # Safety
// `buf` must be null or valid for `cap` bytes.
uintptr_t fn_last_error(char *buf, uintptr_t cap);

// Parses an OFF file held in memory.
//
// # Safety
// `data` must be valid for `len` bytes; `mesh_out` must be writable.
enum FnStatus fn_mesh_parse_off(const uint8_t *data, uintptr_t len, struct FnMesh **mesh_out);

// # Safety
// `mesh` must be null or a handle from this library, not yet freed.
void fn_mesh_free(struct FnMesh *mesh);

// # Safety
// `mesh` must be a live handle; the output pointers must be writable.
enum FnStatus fn_mesh_counts(const struct FnMesh *mesh, uintptr_t *vertices, uintptr_t *faces);

// Centers the mesh and scales its longest side to `1 - 2 * padding`.
//
// # Safety
// `mesh` must be a live handle; `mesh_out` must be writable.
enum FnStatus fn_mesh_normalize(const struct FnMesh *mesh,
                                double padding,
                                struct FnMesh **mesh_out);

// Rotates by polar angle `theta` and azimuth `phi` (radians).
//
// # Safety
// `mesh` must be a live handle; `mesh_out` must be writable.
enum FnStatus fn_mesh_rotate(const struct FnMesh *mesh,
                             double theta,
                             double phi,
                             struct FnMesh **mesh_out);

// Surface occupancy grid of a normalized mesh.
//
// # Safety
// `mesh` must be a live handle; `grid_out` must be writable.
enum FnStatus fn_voxelize(const struct FnMesh *mesh,
                          uintptr_t resolution,
                          struct FnVoxelGrid **grid_out);

// # Safety
// `grid` must be null or a handle from this library, not yet freed.
void fn_grid_free(struct FnVoxelGrid *grid);

// # Safety
// `grid` must be a live handle; `resolution` and `occupied` must be writable.
enum FnStatus fn_grid_info(const struct FnVoxelGrid *grid,
                           uintptr_t *resolution,
                           uintptr_t *occupied);

// Serializes the grid in the voxel cache format. `needed` receives the
// byte count; with a short or null `buf` the call returns
// `FN_STATUS_BUFFER_TOO_SMALL` and writes nothing else.
//
// # Safety
// `buf` must be null or valid for `cap` bytes; `needed` must be writable.
enum FnStatus fn_grid_cache_bytes(const struct FnVoxelGrid *grid,
                                  uint8_t *buf,
                                  uintptr_t cap,
                                  uintptr_t *needed);

// Renders view `view` (0..20) of a normalized mesh into `pixels`, which
// must hold `image_size * image_size` values in [0, 1], row 0 at the top.
//
// # Safety
// `mesh` must be a live handle; `pixels` must be valid for `cap` floats.
enum FnStatus fn_render_view(const struct FnMesh *mesh,
                             uintptr_t image_size,
                             uintptr_t view,
                             float *pixels,
                             uintptr_t cap);

// Builds a freshly initialized network. `architecture` is one of
// "vcnn1", "vcnn2" or "mvnet".
//
// # Safety
// `architecture` must be a NUL-terminated string; `net_out` must be writable.
enum FnStatus fn_network_build(const char *architecture,
                               uintptr_t classes,
                               uintptr_t resolution,
                               uintptr_t image_size,
                               uint64_t seed,
                               struct FnNetwork **net_out);

// # Safety
// `net` must be null or a handle from this library, not yet freed.
void fn_network_free(struct FnNetwork *net);

// Number of trainable parameters, or 0 for a null handle.
//
// # Safety
// `net` must be null or a live handle.
uintptr_t fn_network_param_count(const struct FnNetwork *net);

// Number of input values per view (or per voxel grid).
//
// # Safety
// `net` must be null or a live handle.
uintptr_t fn_network_input_len(const struct FnNetwork *net);

// Replaces the parameters with a weights file held in memory.
//
// # Safety
// `net` must be a live handle; `data` must be valid for `len` bytes.
enum FnStatus fn_network_load_weights(struct FnNetwork *net, const uint8_t *data, uintptr_t len);

// Class scores for one object given `views` consecutive inputs of
// `fn_network_input_len` values each. Volumetric networks take one view.
//
// # Safety
// `net` must be a live handle; `input` must hold `views * input_len`
// floats and `scores` must be valid for `classes` floats.
enum FnStatus fn_network_forward(struct FnNetwork *net,
                                 const float *input,
                                 uintptr_t views,
                                 float *scores,
                                 uintptr_t classes);

// Weighted score fusion for one object: `scores` is a row-major
// `[components x classes]` matrix. Writes the predicted class index.
//
// # Safety
// `scores` must hold `components * classes` floats, `weights` must hold
// `components` floats and `predicted` must be writable.
enum FnStatus fn_fuse(const float *scores,
                      uintptr_t components,
                      uintptr_t classes,
                      const double *weights,
                      bool softmax,
                      uintptr_t *predicted);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* FUSIONNET_H */
