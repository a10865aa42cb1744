#include "cross360/cross360.h"

#include <cstdlib>
#include <cstring>
#include <memory>
#include <new>
#include <string>

#include "cross360/error.hpp"
#include "cross360/gradcheck.hpp"
#include "cross360/io.hpp"
#include "cross360/layout.hpp"
#include "cross360/metrics.hpp"
#include "cross360/model.hpp"
#include "cross360/resampler.hpp"
#include "cross360/serialize.hpp"
#include "cross360/toy.hpp"

struct c360_grid {
  cross360::Grid grid;
};

struct c360_layout {
  cross360::Layout layout;
};

struct c360_patchset {
  cross360::PatchSet set;
};

struct c360_model {
  std::unique_ptr<cross360::Model> model;
};

struct c360_result {
  std::vector<cross360::Grid> depths;
  cross360::Json summary;
};

namespace {

using namespace cross360;

thread_local std::string g_last_error;

c360_status fail(c360_status status, const std::string& message) {
  g_last_error = message;
  return status;
}

template <typename F>
c360_status guarded(F&& body) {
  try {
    body();
    return C360_OK;
  } catch (const Error& e) {
    switch (e.kind()) {
      case ErrorKind::Validation: return fail(C360_ERR_VALIDATION, e.what());
      case ErrorKind::Io: return fail(C360_ERR_IO, e.what());
      case ErrorKind::Numeric: return fail(C360_ERR_NUMERIC, e.what());
    }
    return fail(C360_ERR_INTERNAL, e.what());
  } catch (const nlohmann::json::exception& e) {
    return fail(C360_ERR_VALIDATION, std::string("json: ") + e.what());
  } catch (const std::bad_alloc&) {
    return fail(C360_ERR_INTERNAL, "out of memory");
  } catch (const std::exception& e) {
    return fail(C360_ERR_INTERNAL, e.what());
  } catch (...) {
    return fail(C360_ERR_INTERNAL, "unknown error");
  }
}

void require(const void* p, const char* what) {
  if (!p) throw ValidationError(std::string(what) + " must not be null");
}

char* dup_string(const std::string& s) {
  char* out = static_cast<char*>(std::malloc(s.size() + 1));
  if (!out) throw std::bad_alloc();
  std::memcpy(out, s.c_str(), s.size() + 1);
  return out;
}

Json run_options_json(const char* text) {
  return text && *text ? parse_json(text, "options") : Json::object();
}

}  // namespace

extern "C" {

const char* c360_last_error(void) { return g_last_error.c_str(); }

const char* c360_version(void) { return "0.1.0"; }

void c360_string_free(char* s) { std::free(s); }

// ---- grids ----

c360_status c360_grid_create(int channels, int height, int width, const double* data, c360_grid** out) {
  return guarded([&] {
    require(out, "out");
    auto g = std::make_unique<c360_grid>();
    g->grid = Grid(channels, height, width);
    if (data) std::copy(data, data + g->grid.data.size(), g->grid.data.begin());
    *out = g.release();
  });
}

c360_status c360_grid_load(const char* path, c360_grid** out) {
  return guarded([&] {
    require(path, "path");
    require(out, "out");
    auto g = std::make_unique<c360_grid>();
    g->grid = read_image(path);
    *out = g.release();
  });
}

c360_status c360_grid_save_pfm(const c360_grid* grid, const char* path) {
  return guarded([&] {
    require(grid, "grid");
    require(path, "path");
    write_pfm(path, grid->grid);
  });
}

c360_status c360_grid_save_png8(const c360_grid* grid, const char* path) {
  return guarded([&] {
    require(grid, "grid");
    require(path, "path");
    write_png8(path, grid->grid);
  });
}

c360_status c360_grid_save_depth_png16(const c360_grid* grid, const char* path) {
  return guarded([&] {
    require(grid, "grid");
    require(path, "path");
    write_depth_png16(path, grid->grid);
  });
}

c360_status c360_grid_save_mask_png(const c360_grid* grid, const char* path) {
  return guarded([&] {
    require(grid, "grid");
    require(path, "path");
    if (!grid->grid.mask) throw ValidationError("grid has no mask to save");
    write_mask_png(path, *grid->grid.mask, grid->grid.height, grid->grid.width);
  });
}

c360_status c360_grid_set_mask(c360_grid* grid, const uint8_t* mask) {
  return guarded([&] {
    require(grid, "grid");
    if (!mask) {
      grid->grid.mask.reset();
      return;
    }
    grid->grid.mask = Mask(mask, mask + grid->grid.pixels());
  });
}

c360_status c360_grid_load_mask(c360_grid* grid, const char* png_path) {
  return guarded([&] {
    require(grid, "grid");
    require(png_path, "path");
    int h = 0;
    int w = 0;
    Mask m = read_mask_png(png_path, &h, &w);
    if (h != grid->grid.height || w != grid->grid.width) {
      throw ShapeError("mask " + std::to_string(h) + "x" + std::to_string(w) + " does not match grid " +
                       std::to_string(grid->grid.height) + "x" + std::to_string(grid->grid.width));
    }
    grid->grid.mask = std::move(m);
  });
}

c360_status c360_grid_dims(const c360_grid* grid, int* channels, int* height, int* width) {
  return guarded([&] {
    require(grid, "grid");
    if (channels) *channels = grid->grid.channels;
    if (height) *height = grid->grid.height;
    if (width) *width = grid->grid.width;
  });
}

c360_status c360_grid_copy_data(const c360_grid* grid, double* dst, size_t len) {
  return guarded([&] {
    require(grid, "grid");
    require(dst, "dst");
    if (len < grid->grid.data.size()) throw ValidationError("destination buffer too small");
    std::copy(grid->grid.data.begin(), grid->grid.data.end(), dst);
  });
}

c360_status c360_grid_copy_mask(const c360_grid* grid, uint8_t* dst, size_t len, int* has_mask) {
  return guarded([&] {
    require(grid, "grid");
    require(dst, "dst");
    if (len < grid->grid.pixels()) throw ValidationError("destination buffer too small");
    if (has_mask) *has_mask = grid->grid.mask ? 1 : 0;
    if (grid->grid.mask) {
      std::copy(grid->grid.mask->begin(), grid->grid.mask->end(), dst);
    } else {
      std::fill(dst, dst + grid->grid.pixels(), 1);
    }
  });
}

void c360_grid_free(c360_grid* grid) { delete grid; }

// ---- layouts ----

c360_status c360_layout_preset_names(char** json_out) {
  return guarded([&] {
    require(json_out, "json_out");
    *json_out = dup_string(Json(layout_preset_names()).dump());
  });
}

c360_status c360_layout_preset(const char* name, int resolution, c360_layout** out) {
  return guarded([&] {
    require(name, "name");
    require(out, "out");
    auto l = std::make_unique<c360_layout>();
    l->layout = build_layout(layout_preset(name), resolution);
    *out = l.release();
  });
}

c360_status c360_layout_from_json(const char* json, int default_resolution, c360_layout** out) {
  return guarded([&] {
    require(json, "json");
    require(out, "out");
    const Json j = parse_json(json, "layout");
    auto l = std::make_unique<c360_layout>();
    if (j.is_object() && j.contains("patches")) {
      l->layout = layout_from_json(j, default_resolution);
    } else {
      const int res = j.is_object() && j.contains("resolution") ? j.at("resolution").get<int>() : default_resolution;
      l->layout = build_layout(layout_config_from_json(j), res);
    }
    *out = l.release();
  });
}

c360_status c360_layout_to_json(const c360_layout* layout, char** json_out) {
  return guarded([&] {
    require(layout, "layout");
    require(json_out, "json_out");
    *json_out = dup_string(layout_to_json(layout->layout).dump(2));
  });
}

c360_status c360_layout_rotate(c360_layout* layout, double lon_offset_deg) {
  return guarded([&] {
    require(layout, "layout");
    for (auto& spec : layout->layout) {
      spec.center = LatLon::make(spec.center.lat, normalize_lon(spec.center.lon + deg2rad(lon_offset_deg)));
    }
  });
}

c360_status c360_layout_size(const c360_layout* layout, int* count, int* resolution) {
  return guarded([&] {
    require(layout, "layout");
    if (count) *count = static_cast<int>(layout->layout.size());
    if (resolution) *resolution = layout->layout.empty() ? 0 : layout->layout.front().resolution;
  });
}

c360_status c360_layout_center(const c360_layout* layout, int index, double* lat_deg, double* lon_deg,
                               double* fov_deg) {
  return guarded([&] {
    require(layout, "layout");
    if (index < 0 || index >= static_cast<int>(layout->layout.size())) {
      throw IndexError("patch index " + std::to_string(index) + " out of range");
    }
    const auto& s = layout->layout[static_cast<std::size_t>(index)];
    if (lat_deg) *lat_deg = rad2deg(s.center.lat);
    if (lon_deg) *lon_deg = rad2deg(s.center.lon);
    if (fov_deg) *fov_deg = rad2deg(s.fov);
  });
}

c360_status c360_layout_coverage(const c360_layout* layout, double grid_step_deg, double* fraction) {
  return guarded([&] {
    require(layout, "layout");
    require(fraction, "fraction");
    if (!(grid_step_deg > 0.0)) throw ValidationError("grid step must be positive");
    *fraction = coverage_fraction(layout->layout, deg2rad(grid_step_deg));
  });
}

void c360_layout_free(c360_layout* layout) { delete layout; }

// ---- patches ----

c360_status c360_project(const c360_grid* erp, const c360_layout* layout, c360_patchset** out) {
  return guarded([&] {
    require(erp, "erp");
    require(layout, "layout");
    require(out, "out");
    auto p = std::make_unique<c360_patchset>();
    p->set = erp_to_tangent(erp->grid, layout->layout);
    *out = p.release();
  });
}

c360_status c360_patchset_create(const c360_layout* layout, int channels, c360_patchset** out) {
  return guarded([&] {
    require(layout, "layout");
    require(out, "out");
    auto p = std::make_unique<c360_patchset>();
    p->set.specs = layout->layout;
    for (const auto& spec : layout->layout) p->set.grids.emplace_back(channels, spec.resolution, spec.resolution);
    *out = p.release();
  });
}

c360_status c360_patchset_size(const c360_patchset* set, int* count) {
  return guarded([&] {
    require(set, "set");
    require(count, "count");
    *count = static_cast<int>(set->set.grids.size());
  });
}

c360_status c360_patchset_get(const c360_patchset* set, int index, c360_grid** out) {
  return guarded([&] {
    require(set, "set");
    require(out, "out");
    if (index < 0 || index >= static_cast<int>(set->set.grids.size())) {
      throw IndexError("patch index " + std::to_string(index) + " out of range");
    }
    auto g = std::make_unique<c360_grid>();
    g->grid = set->set.grids[static_cast<std::size_t>(index)];
    *out = g.release();
  });
}

c360_status c360_patchset_set(c360_patchset* set, int index, const c360_grid* patch) {
  return guarded([&] {
    require(set, "set");
    require(patch, "patch");
    if (index < 0 || index >= static_cast<int>(set->set.grids.size())) {
      throw IndexError("patch index " + std::to_string(index) + " out of range");
    }
    auto& dst = set->set.grids[static_cast<std::size_t>(index)];
    const auto& src = patch->grid;
    if (src.channels != dst.channels || src.height != dst.height || src.width != dst.width) {
      throw ShapeError("patch " + std::to_string(index) + " is " + std::to_string(src.channels) + "x" +
                       std::to_string(src.height) + "x" + std::to_string(src.width) + ", expected " +
                       std::to_string(dst.channels) + "x" + std::to_string(dst.height) + "x" +
                       std::to_string(dst.width));
    }
    dst = src;
  });
}

c360_status c360_stitch(const c360_patchset* set, int height, int width, c360_grid** out) {
  return guarded([&] {
    require(set, "set");
    require(out, "out");
    auto g = std::make_unique<c360_grid>();
    g->grid = tangent_to_erp(set->set, height, width);
    *out = g.release();
  });
}

void c360_patchset_free(c360_patchset* set) { delete set; }

// ---- model ----

c360_status c360_model_create(const char* config_json, c360_model** out) {
  return guarded([&] {
    require(out, "out");
    ModelConfig config;
    if (config_json && *config_json) config = model_config_from_json(parse_json(config_json, "model config"));
    auto m = std::make_unique<c360_model>();
    m->model = std::make_unique<Model>(config);
    *out = m.release();
  });
}

c360_status c360_model_config_json(const c360_model* model, char** json_out) {
  return guarded([&] {
    require(model, "model");
    require(json_out, "json_out");
    *json_out = dup_string(model_config_to_json(model->model->config()).dump(2));
  });
}

c360_status c360_model_parameter_count(const c360_model* model, size_t* count) {
  return guarded([&] {
    require(model, "model");
    require(count, "count");
    *count = model->model->params().scalar_count();
  });
}

c360_status c360_model_save(const c360_model* model, const char* manifest_path, const char* blob_path) {
  return guarded([&] {
    require(model, "model");
    require(manifest_path, "manifest_path");
    require(blob_path, "blob_path");
    model->model->params().save(manifest_path, blob_path);
  });
}

c360_status c360_model_load(c360_model* model, const char* manifest_path, const char* blob_path) {
  return guarded([&] {
    require(model, "model");
    require(manifest_path, "manifest_path");
    require(blob_path, "blob_path");
    model->model->params().load(manifest_path, blob_path);
  });
}

c360_status c360_model_forward(const c360_model* model, const c360_grid* image, c360_result** out) {
  return guarded([&] {
    require(model, "model");
    require(image, "image");
    require(out, "out");
    nn::NoGradGuard no_grad;
    const StageFeatures f = model->model->forward(image->grid);
    auto r = std::make_unique<c360_result>();
    auto shapes = [](const std::vector<nn::Tensor>& ts) {
      Json list = Json::array();
      for (const auto& t : ts) list.push_back(t.shape());
      return list;
    };
    for (const auto& d : f.depths) r->depths.push_back(to_grid(d));
    r->summary = {{"config", model_config_to_json(model->model->config())},
                  {"stages",
                   {{"erp", shapes(f.erp)},
                    {"aligned", shapes(f.aligned)},
                    {"decoded", shapes(f.decoded)},
                    {"aggregated", shapes(f.aggregated)},
                    {"depths", shapes(f.depths)}}},
                  {"trace",
                   {{"cpfa_calls", f.trace.cpfa_calls},
                    {"cpfa_scales", f.trace.cpfa_scales},
                    {"query_tokens", f.trace.query_tokens},
                    {"key_tokens", f.trace.key_tokens},
                    {"erp_to_tangent_scales", f.trace.erp_to_tangent_scales}}}};
    *out = r.release();
  });
}

void c360_model_free(c360_model* model) { delete model; }

c360_status c360_estimate_flops(const char* config_json, double* macs) {
  return guarded([&] {
    require(macs, "macs");
    ModelConfig config;
    if (config_json && *config_json) config = model_config_from_json(parse_json(config_json, "model config"));
    *macs = estimate_flops(config).total();
  });
}

c360_status c360_config_hash(const char* json, char** hash_out) {
  return guarded([&] {
    require(json, "json");
    require(hash_out, "hash_out");
    *hash_out = dup_string(config_hash(parse_json(json, "config")));
  });
}

c360_status c360_result_depth_count(const c360_result* result, int* count) {
  return guarded([&] {
    require(result, "result");
    require(count, "count");
    *count = static_cast<int>(result->depths.size());
  });
}

c360_status c360_result_depth(const c360_result* result, int scale, c360_grid** out) {
  return guarded([&] {
    require(result, "result");
    require(out, "out");
    if (scale < 1 || scale > static_cast<int>(result->depths.size())) {
      throw IndexError("scale " + std::to_string(scale) + " out of range 1.." + std::to_string(result->depths.size()));
    }
    auto g = std::make_unique<c360_grid>();
    g->grid = result->depths[static_cast<std::size_t>(scale - 1)];
    *out = g.release();
  });
}

c360_status c360_result_summary_json(const c360_result* result, char** json_out) {
  return guarded([&] {
    require(result, "result");
    require(json_out, "json_out");
    *json_out = dup_string(result->summary.dump(2));
  });
}

void c360_result_free(c360_result* result) { delete result; }

// ---- evaluation and experiments ----

c360_status c360_evaluate(const c360_grid* pred, const c360_grid* gt, const c360_grid* mask, double max_depth,
                          const double* bin_edges, size_t edge_count, char** report_json) {
  return guarded([&] {
    require(pred, "pred");
    require(gt, "gt");
    require(report_json, "report_json");
    std::vector<double> edges = default_bin_edges();
    if (bin_edges) edges.assign(bin_edges, bin_edges + edge_count);
    const Mask* m = nullptr;
    if (mask) {
      if (!mask->grid.mask) throw ValidationError("mask grid carries no mask");
      m = &*mask->grid.mask;
    }
    Grid p = pred->grid;
    if (p.mask) {
      // a prediction mask also restricts evaluation
      Grid g = gt->grid;
      Mask combined = g.mask ? *g.mask : Mask(g.pixels(), 1);
      if (combined.size() != p.mask->size()) throw ShapeError("prediction and ground truth sizes differ");
      for (std::size_t i = 0; i < combined.size(); ++i) combined[i] = combined[i] && (*p.mask)[i];
      g.mask = std::move(combined);
      *report_json = dup_string(metrics_to_json(depth_metrics(p, g, m, max_depth, edges)).dump(2));
      return;
    }
    *report_json = dup_string(metrics_to_json(depth_metrics(p, gt->grid, m, max_depth, edges)).dump(2));
  });
}

c360_status c360_toy_scene(int height, c360_grid** image, c360_grid** depth) {
  return guarded([&] {
    require(image, "image");
    require(depth, "depth");
    ToyScene scene = make_toy_scene(height, 2 * height);
    auto i = std::make_unique<c360_grid>();
    auto d = std::make_unique<c360_grid>();
    i->grid = std::move(scene.image);
    d->grid = std::move(scene.depth);
    *image = i.release();
    *depth = d.release();
  });
}

c360_status c360_traintoy(c360_model* model, const c360_grid* image, const c360_grid* depth,
                          const char* options_json, char** report_json) {
  return guarded([&] {
    require(model, "model");
    require(image, "image");
    require(depth, "depth");
    require(report_json, "report_json");
    const Json j = run_options_json(options_json);
    TrainOptions opt;
    opt.iterations = j.value("iterations", opt.iterations);
    opt.learning_rate = j.value("learning_rate", opt.learning_rate);
    opt.momentum = j.value("momentum", opt.momentum);
    const std::string loss = j.value("loss", std::string("mse"));
    if (loss == "berhu") {
      opt.loss.pixel = PixelLoss::Berhu;
    } else if (loss != "mse") {
      throw ConfigError("loss must be 'mse' or 'berhu', got '" + loss + "'");
    }
    opt.loss.sum_reduction = j.value("sum_reduction", false);
    opt.loss.gradient_magnitude = j.value("gradient_magnitude", false);
    const ToyTrainReport r = train_toy(*model->model, image->grid, depth->grid, opt);
    Json series = Json::array();
    for (const auto& l : r.series) series.push_back(loss_to_json(l));
    const Json report = {{"seed", r.seed},
                         {"iterations", r.iterations},
                         {"learning_rate", opt.learning_rate},
                         {"momentum", opt.momentum},
                         {"loss", loss},
                         {"initial_loss", r.initial_loss},
                         {"final_loss", r.final_loss},
                         {"series", series},
                         {"final_metrics", metrics_to_json(r.final_metrics)},
                         {"seconds", r.seconds}};
    *report_json = dup_string(report.dump(2));
  });
}

c360_status c360_gradcheck(uint64_t seed, const char* corrupt_op, char** report_json, int* all_passed) {
  return guarded([&] {
    require(report_json, "report_json");
    const GradcheckReport r = run_gradcheck(seed, corrupt_op ? corrupt_op : "");
    Json entries = Json::array();
    for (const auto& e : r.entries) {
      entries.push_back({{"op", e.op},
                         {"max_rel_error", e.max_rel_error},
                         {"tolerance", e.tolerance},
                         {"coordinates", e.coordinates},
                         {"skipped_at_kinks", e.skipped},
                         {"passed", e.passed}});
    }
    const Json report = {{"seed", r.seed}, {"step", r.step}, {"all_passed", r.all_passed()},
                         {"failed", r.failed_ops()}, {"entries", entries}};
    *report_json = dup_string(report.dump(2));
    if (all_passed) *all_passed = r.all_passed() ? 1 : 0;
  });
}

}  // extern "C"
