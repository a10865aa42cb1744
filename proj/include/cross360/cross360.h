/*
 * cross360 C API.
 *
 * Every function returns a c360_status. On failure the message is available
 * from c360_last_error() on the same thread until the next failing call.
 * Handles are opaque; free each with its matching *_free function (NULL is
 * accepted). Strings returned through char** belong to the caller and are
 * released with c360_string_free.
 */
#ifndef CROSS360_H
#define CROSS360_H

#include <stddef.h>
#include <stdint.h>

#if defined(_WIN32)
#define C360_API
#else
#define C360_API __attribute__((visibility("default")))
#endif

#ifdef __cplusplus
extern "C" {
#endif

typedef enum c360_status {
  C360_OK = 0,
  C360_ERR_VALIDATION = 1, /* bad arguments, shapes or configuration */
  C360_ERR_IO = 2,
  C360_ERR_NUMERIC = 3, /* non-finite values, divergence */
  C360_ERR_INTERNAL = 4
} c360_status;

typedef struct c360_grid c360_grid;
typedef struct c360_layout c360_layout;
typedef struct c360_patchset c360_patchset;
typedef struct c360_model c360_model;
typedef struct c360_result c360_result;

C360_API const char* c360_last_error(void);
C360_API const char* c360_version(void);
C360_API void c360_string_free(char* s);

/* ---- grids: channel-major doubles with an optional validity mask ---- */

/* data may be NULL (zero fill); otherwise channels*height*width values. */
C360_API c360_status c360_grid_create(int channels, int height, int width, const double* data,
                                      c360_grid** out);
/* .pfm, or .png (16-bit reads as depth / 4000, 8-bit as value / 255). */
C360_API c360_status c360_grid_load(const char* path, c360_grid** out);
C360_API c360_status c360_grid_save_pfm(const c360_grid* grid, const char* path);
C360_API c360_status c360_grid_save_png8(const c360_grid* grid, const char* path);
/* Single channel, stored as round(depth * 4000). */
C360_API c360_status c360_grid_save_depth_png16(const c360_grid* grid, const char* path);
/* Writes 255 for valid pixels; fails if the grid carries no mask. */
C360_API c360_status c360_grid_save_mask_png(const c360_grid* grid, const char* path);
/* mask may be NULL to drop the mask; otherwise height*width entries. */
C360_API c360_status c360_grid_set_mask(c360_grid* grid, const uint8_t* mask);
C360_API c360_status c360_grid_load_mask(c360_grid* grid, const char* png_path);
C360_API c360_status c360_grid_dims(const c360_grid* grid, int* channels, int* height, int* width);
C360_API c360_status c360_grid_copy_data(const c360_grid* grid, double* dst, size_t len);
/* has_mask receives 0 when the grid has no mask (dst is then filled with 1). */
C360_API c360_status c360_grid_copy_mask(const c360_grid* grid, uint8_t* dst, size_t len, int* has_mask);
C360_API void c360_grid_free(c360_grid* grid);

/* ---- layouts ---- */

C360_API c360_status c360_layout_preset_names(char** json_out);
C360_API c360_status c360_layout_preset(const char* name, int resolution, c360_layout** out);
/* Either a patch list {"patches": [...], "resolution": r} or a row config
   {"rows": [{"lat_deg", "count"}], "fov_deg", "lon_offset_deg"} / {"preset": name}. */
C360_API c360_status c360_layout_from_json(const char* json, int default_resolution, c360_layout** out);
C360_API c360_status c360_layout_to_json(const c360_layout* layout, char** json_out);
C360_API c360_status c360_layout_rotate(c360_layout* layout, double lon_offset_deg);
C360_API c360_status c360_layout_size(const c360_layout* layout, int* count, int* resolution);
C360_API c360_status c360_layout_center(const c360_layout* layout, int index, double* lat_deg,
                                        double* lon_deg, double* fov_deg);
C360_API c360_status c360_layout_coverage(const c360_layout* layout, double grid_step_deg, double* fraction);
C360_API void c360_layout_free(c360_layout* layout);

/* ---- ERP <-> tangent patches ---- */

C360_API c360_status c360_project(const c360_grid* erp, const c360_layout* layout, c360_patchset** out);
C360_API c360_status c360_patchset_create(const c360_layout* layout, int channels, c360_patchset** out);
C360_API c360_status c360_patchset_size(const c360_patchset* set, int* count);
C360_API c360_status c360_patchset_get(const c360_patchset* set, int index, c360_grid** out);
C360_API c360_status c360_patchset_set(c360_patchset* set, int index, const c360_grid* patch);
/* Blends every patch back to an ERP grid; the result's mask marks coverage. */
C360_API c360_status c360_stitch(const c360_patchset* set, int height, int width, c360_grid** out);
C360_API void c360_patchset_free(c360_patchset* set);

/* ---- model ---- */

/* config_json may be NULL for the defaults; "seed" selects the initialization. */
C360_API c360_status c360_model_create(const char* config_json, c360_model** out);
C360_API c360_status c360_model_config_json(const c360_model* model, char** json_out);
C360_API c360_status c360_model_parameter_count(const c360_model* model, size_t* count);
C360_API c360_status c360_model_save(const c360_model* model, const char* manifest_path, const char* blob_path);
/* Fails with a manifest diff when the checkpoint does not fit the model. */
C360_API c360_status c360_model_load(c360_model* model, const char* manifest_path, const char* blob_path);
C360_API c360_status c360_model_forward(const c360_model* model, const c360_grid* image, c360_result** out);
C360_API void c360_model_free(c360_model* model);

C360_API c360_status c360_estimate_flops(const char* config_json, double* macs);
/* 16 hex digits identifying any JSON document (key order does not matter). */
C360_API c360_status c360_config_hash(const char* json, char** hash_out);

C360_API c360_status c360_result_depth_count(const c360_result* result, int* count);
/* scale runs from 1 (coarsest) to S (input resolution). */
C360_API c360_status c360_result_depth(const c360_result* result, int scale, c360_grid** out);
/* Stage shapes per scale plus the instrumentation counters. */
C360_API c360_status c360_result_summary_json(const c360_result* result, char** json_out);
C360_API void c360_result_free(c360_result* result);

/* ---- evaluation and experiments ---- */

/* mask may be NULL; the grids' own masks always apply. bin_edges may be NULL
   for 0,2,4,6,8,10 m. */
C360_API c360_status c360_evaluate(const c360_grid* pred, const c360_grid* gt, const c360_grid* mask,
                                   double max_depth, const double* bin_edges, size_t edge_count,
                                   char** report_json);
C360_API c360_status c360_toy_scene(int height, c360_grid** image, c360_grid** depth);
/* options_json: {"iterations", "learning_rate", "momentum", "loss": "mse"|"berhu",
   "sum_reduction", "gradient_magnitude"}. Trains the model in place. */
C360_API c360_status c360_traintoy(c360_model* model, const c360_grid* image, const c360_grid* depth,
                                   const char* options_json, char** report_json);
/* corrupt_op may be NULL; names an op whose gradient rule is deliberately broken. */
C360_API c360_status c360_gradcheck(uint64_t seed, const char* corrupt_op, char** report_json, int* all_passed);

#ifdef __cplusplus
}
#endif

#endif /* CROSS360_H */
