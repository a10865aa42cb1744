// cross360 command line front end. Talks to the library only through cross360.h.

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <memory>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "cross360/cross360.h"

namespace fs = std::filesystem;
using Json = nlohmann::json;

namespace {

// exit codes
constexpr int kExitOk = 0;
constexpr int kExitValidation = 1;
constexpr int kExitIo = 2;
constexpr int kExitNumeric = 3;
constexpr int kExitInternal = 4;

struct Failure {
  int code;
  std::string message;
};

int exit_code(c360_status s) {
  switch (s) {
    case C360_OK: return kExitOk;
    case C360_ERR_VALIDATION: return kExitValidation;
    case C360_ERR_IO: return kExitIo;
    case C360_ERR_NUMERIC: return kExitNumeric;
    default: return kExitInternal;
  }
}

void check(c360_status s) {
  if (s != C360_OK) throw Failure{exit_code(s), c360_last_error()};
}

[[noreturn]] void invalid(const std::string& message) { throw Failure{kExitValidation, message}; }

template <typename T, void (*Free)(T*)>
struct Deleter {
  void operator()(T* p) const { Free(p); }
};
using GridPtr = std::unique_ptr<c360_grid, Deleter<c360_grid, c360_grid_free>>;
using LayoutPtr = std::unique_ptr<c360_layout, Deleter<c360_layout, c360_layout_free>>;
using PatchSetPtr = std::unique_ptr<c360_patchset, Deleter<c360_patchset, c360_patchset_free>>;
using ModelPtr = std::unique_ptr<c360_model, Deleter<c360_model, c360_model_free>>;
using ResultPtr = std::unique_ptr<c360_result, Deleter<c360_result, c360_result_free>>;

std::string take(char* s) {
  std::string out = s ? s : "";
  c360_string_free(s);
  return out;
}

std::string read_text(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Failure{kExitIo, "cannot read " + path.string()};
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_text(const fs::path& path, const std::string& text) {
  const fs::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw Failure{kExitIo, "cannot write " + tmp.string()};
    out << text;
    if (!out.flush()) throw Failure{kExitIo, "short write to " + tmp.string()};
  }
  std::error_code ec;
  fs::rename(tmp, path, ec);
  if (ec) throw Failure{kExitIo, "cannot rename " + tmp.string() + ": " + ec.message()};
}

Json parse(const std::string& text, const std::string& what) {
  try {
    return Json::parse(text);
  } catch (const Json::exception& e) {
    invalid(what + ": " + e.what());
  }
}

std::string hash_of(const Json& j) {
  char* out = nullptr;
  check(c360_config_hash(j.dump().c_str(), &out));
  return take(out);
}

GridPtr load_grid(const std::string& path) {
  c360_grid* g = nullptr;
  check(c360_grid_load(path.c_str(), &g));
  return GridPtr(g);
}

struct GridDims {
  int c = 0, h = 0, w = 0;
};

GridDims dims(const c360_grid* g) {
  GridDims d;
  check(c360_grid_dims(g, &d.c, &d.h, &d.w));
  return d;
}

void save_grid(const c360_grid* g, const fs::path& path) {
  const std::string ext = path.extension().string();
  if (ext == ".pfm") {
    check(c360_grid_save_pfm(g, path.string().c_str()));
  } else if (ext == ".png") {
    check(c360_grid_save_png8(g, path.string().c_str()));
  } else {
    invalid("unsupported output extension '" + ext + "' (use .png or .pfm)");
  }
}

std::string fmt1(double deg) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.1f", deg);
  return buf;
}

std::string patch_stem(int index, double lat, double lon) {
  char buf[16];
  std::snprintf(buf, sizeof buf, "%02d", index);
  return std::string(buf) + "_" + fmt1(lat) + "_" + fmt1(lon);
}

struct Globals {
  std::uint64_t seed = 0;
  bool seed_set = false;
  std::string config;
  std::string output_dir = ".";
};

fs::path out_dir(const Globals& g) {
  fs::path dir(g.output_dir);
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw Failure{kExitIo, "cannot create " + dir.string() + ": " + ec.message()};
  return dir;
}

Json config_file(const Globals& g) {
  if (g.config.empty()) return Json::object();
  Json j = parse(read_text(g.config), g.config);
  if (!j.is_object()) invalid(g.config + ": expected a JSON object");
  return j;
}

// model section of --config: either the whole file or its "model" member
Json model_config(const Globals& g, const Json& defaults) {
  Json file = config_file(g);
  Json model = file.contains("model") ? file.at("model") : file;
  if (model.empty()) model = defaults;
  if (g.seed_set) model["seed"] = g.seed;
  return model;
}

ModelPtr make_model(const Json& config) {
  c360_model* m = nullptr;
  check(c360_model_create(config.dump().c_str(), &m));
  return ModelPtr(m);
}

void load_checkpoint(c360_model* m, const std::string& prefix) {
  check(c360_model_load(m, (prefix + ".json").c_str(), (prefix + ".bin").c_str()));
}

void save_checkpoint(const c360_model* m, const std::string& prefix) {
  check(c360_model_save(m, (prefix + ".json").c_str(), (prefix + ".bin").c_str()));
}

// small model used by traintoy when no config is given
Json toy_model_defaults() {
  return {{"channels", {16, 16, 12, 8, 8}}, {"heads", 2}, {"patch_resolutions", {4, 6, 8, 8}}, {"seed", 1}};
}

LayoutPtr make_layout(const std::string& preset, const std::string& layout_json, int resolution) {
  c360_layout* l = nullptr;
  if (!layout_json.empty()) {
    check(c360_layout_from_json(read_text(layout_json).c_str(), resolution, &l));
  } else {
    check(c360_layout_preset(preset.c_str(), resolution, &l));
  }
  return LayoutPtr(l);
}

std::string layout_json(const c360_layout* l) {
  char* s = nullptr;
  check(c360_layout_to_json(l, &s));
  return take(s);
}

// ---- subcommands ----

struct LayoutArgs {
  std::string preset = "full-26";
  int resolution = 24;
  bool list = false;
  double lon_offset = 0.0;
};

void cmd_layout(const Globals& g, const LayoutArgs& a) {
  if (a.list) {
    char* s = nullptr;
    check(c360_layout_preset_names(&s));
    for (const auto& name : parse(take(s), "presets")) std::cout << name.get<std::string>() << "\n";
    return;
  }
  LayoutPtr l = make_layout(a.preset, "", a.resolution);
  if (a.lon_offset != 0.0) check(c360_layout_rotate(l.get(), a.lon_offset));
  int count = 0;
  check(c360_layout_size(l.get(), &count, nullptr));
  double cov = 0.0;
  check(c360_layout_coverage(l.get(), 1.0, &cov));
  const fs::path path = out_dir(g) / "layout.json";
  write_text(path, layout_json(l.get()) + "\n");
  std::cout << a.preset << ": " << count << " patches, coverage " << cov << " at 1 deg\n";
  for (int i = 0; i < count; ++i) {
    double lat = 0, lon = 0, fov = 0;
    check(c360_layout_center(l.get(), i, &lat, &lon, &fov));
    std::printf("  %2d lat %7.2f lon %8.2f fov %5.1f\n", i, lat, lon, fov);
  }
  std::cout << "wrote " << path.string() << "\n";
}

struct ProjectArgs {
  std::string input;
  std::string preset = "full-26";
  std::string layout;
  int resolution = 24;
  std::string format = "png";
};

void cmd_project(const Globals& g, const ProjectArgs& a) {
  if (a.format != "png" && a.format != "pfm") invalid("format must be png or pfm");
  GridPtr erp = load_grid(a.input);
  LayoutPtr l = make_layout(a.preset, a.layout, a.resolution);
  c360_patchset* raw = nullptr;
  check(c360_project(erp.get(), l.get(), &raw));
  PatchSetPtr set(raw);
  int count = 0;
  check(c360_patchset_size(set.get(), &count));
  const fs::path dir = out_dir(g);
  for (int i = 0; i < count; ++i) {
    double lat = 0, lon = 0;
    check(c360_layout_center(l.get(), i, &lat, &lon, nullptr));
    c360_grid* p = nullptr;
    check(c360_patchset_get(set.get(), i, &p));
    GridPtr patch(p);
    save_grid(patch.get(), dir / (patch_stem(i, lat, lon) + "." + a.format));
  }
  write_text(dir / "layout.json", layout_json(l.get()) + "\n");
  std::cout << "wrote " << count << " patches to " << dir.string() << "\n";
}

struct StitchArgs {
  std::string input_dir;
  std::string layout;
  int height = 64;
  int width = 128;
  std::string output = "stitched.pfm";
};

void cmd_stitch(const Globals& g, const StitchArgs& a) {
  const fs::path in(a.input_dir);
  const fs::path layout_path = a.layout.empty() ? in / "layout.json" : fs::path(a.layout);
  LayoutPtr l = make_layout("", layout_path.string(), 0);
  int count = 0;
  int resolution = 0;
  check(c360_layout_size(l.get(), &count, &resolution));

  // index -> file, by the two-digit prefix
  std::map<int, fs::path> files;
  std::error_code ec;
  for (const auto& entry : fs::directory_iterator(in, ec)) {
    const std::string name = entry.path().filename().string();
    const std::string ext = entry.path().extension().string();
    if (ext != ".png" && ext != ".pfm") continue;
    if (name.size() < 3 || name[2] != '_' || !std::isdigit(name[0]) || !std::isdigit(name[1])) continue;
    const int idx = std::stoi(name.substr(0, 2));
    if (files.count(idx)) invalid("two files for patch " + std::to_string(idx));
    files[idx] = entry.path();
  }
  if (ec) throw Failure{kExitIo, "cannot list " + in.string() + ": " + ec.message()};

  std::vector<int> missing;
  for (int i = 0; i < count; ++i) {
    if (!files.count(i)) missing.push_back(i);
  }
  std::vector<int> extra;
  for (const auto& [idx, path] : files) {
    if (idx >= count) extra.push_back(idx);
  }
  if (!missing.empty() || !extra.empty()) {
    std::string msg = "layout has " + std::to_string(count) + " patches, found " + std::to_string(files.size()) +
                      " files";
    auto join = [](const std::vector<int>& v) {
      std::string s;
      for (int i : v) s += (s.empty() ? "" : ", ") + std::to_string(i);
      return s;
    };
    if (!missing.empty()) msg += "; missing index " + join(missing);
    if (!extra.empty()) msg += "; unexpected index " + join(extra);
    invalid(msg);
  }

  GridPtr first = load_grid(files[0].string());
  c360_patchset* raw = nullptr;
  check(c360_patchset_create(l.get(), dims(first.get()).c, &raw));
  PatchSetPtr set(raw);
  for (int i = 0; i < count; ++i) {
    GridPtr patch = i == 0 ? std::move(first) : load_grid(files[i].string());
    const c360_status s = c360_patchset_set(set.get(), i, patch.get());
    if (s != C360_OK) throw Failure{exit_code(s), files[i].string() + ": " + c360_last_error()};
  }
  c360_grid* out = nullptr;
  check(c360_stitch(set.get(), a.height, a.width, &out));
  GridPtr erp(out);
  const fs::path dir = out_dir(g);
  const fs::path image_path = dir / a.output;
  save_grid(erp.get(), image_path);
  const fs::path mask_path = dir / (image_path.stem().string() + "_mask.png");
  check(c360_grid_save_mask_png(erp.get(), mask_path.string().c_str()));
  std::cout << "wrote " << image_path.string() << " and " << mask_path.string() << "\n";
}

void write_depth(const c360_grid* d, const fs::path& stem, bool png16) {
  check(c360_grid_save_pfm(d, (stem.string() + ".pfm").c_str()));
  if (png16) check(c360_grid_save_depth_png16(d, (stem.string() + ".png").c_str()));
}

struct ForwardArgs {
  std::string input;
  std::string mask;
  bool toy = false;
  std::string checkpoint;
  std::string save_checkpoint;
  bool all_scales = false;
  bool png16 = false;
};

void cmd_forward(const Globals& g, const ForwardArgs& a) {
  if (a.input.empty() == !a.toy) invalid("give exactly one of --input or --toy");
  const Json config = model_config(g, Json::object());
  ModelPtr model = make_model(config);
  if (!a.checkpoint.empty()) load_checkpoint(model.get(), a.checkpoint);
  char* cfg = nullptr;
  check(c360_model_config_json(model.get(), &cfg));
  const Json resolved = parse(take(cfg), "model config");

  GridPtr image;
  if (a.toy) {
    c360_grid* im = nullptr;
    c360_grid* depth = nullptr;
    check(c360_toy_scene(resolved.at("height").get<int>(), &im, &depth));
    image.reset(im);
    c360_grid_free(depth);
  } else {
    image = load_grid(a.input);
  }
  if (!a.mask.empty()) check(c360_grid_load_mask(image.get(), a.mask.c_str()));

  const auto t0 = std::chrono::steady_clock::now();
  c360_result* raw = nullptr;
  check(c360_model_forward(model.get(), image.get(), &raw));
  ResultPtr result(raw);
  const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();

  int scales = 0;
  check(c360_result_depth_count(result.get(), &scales));
  const fs::path dir = out_dir(g);
  Json written = Json::array();
  for (int s = a.all_scales ? 1 : scales; s <= scales; ++s) {
    c360_grid* d = nullptr;
    check(c360_result_depth(result.get(), s, &d));
    GridPtr depth(d);
    const std::string stem = s == scales ? "depth" : "depth_s" + std::to_string(s);
    write_depth(depth.get(), dir / stem, a.png16);
    const GridDims dd = dims(depth.get());
    written.push_back({{"scale", s}, {"file", stem + ".pfm"}, {"height", dd.h}, {"width", dd.w}});
  }
  if (!a.save_checkpoint.empty()) save_checkpoint(model.get(), a.save_checkpoint);

  char* sum = nullptr;
  check(c360_result_summary_json(result.get(), &sum));
  Json summary = parse(take(sum), "summary");
  summary["seed"] = resolved.at("seed");
  summary["config_hash"] = hash_of(resolved);
  summary["outputs"] = written;
  write_text(dir / "summary.json", summary.dump(2) + "\n");
  std::printf("forward %dx%d, %d cpfa calls, %.2fs\n", resolved.at("height").get<int>(),
              resolved.at("width").get<int>(), summary["trace"]["cpfa_calls"].get<int>(), seconds);
  for (const auto& w : written) {
    std::printf("  scale %d: %dx%d -> %s\n", w["scale"].get<int>(), w["height"].get<int>(),
                w["width"].get<int>(), (dir / w["file"].get<std::string>()).string().c_str());
  }
}

struct TrainArgs {
  std::string image;
  std::string depth;
  int iterations = 200;
  double lr = 1e-3;
  double momentum = 0.0;
  std::string loss = "mse";
  bool write_scene = false;
  std::string save_checkpoint;
};

void cmd_traintoy(const Globals& g, const TrainArgs& a) {
  if (a.image.empty() != a.depth.empty()) invalid("--image and --depth go together");
  const Json config = model_config(g, toy_model_defaults());
  ModelPtr model = make_model(config);
  char* cfg = nullptr;
  check(c360_model_config_json(model.get(), &cfg));
  const Json resolved = parse(take(cfg), "model config");
  const fs::path dir = out_dir(g);

  GridPtr image;
  GridPtr depth;
  if (a.image.empty()) {
    c360_grid* im = nullptr;
    c360_grid* d = nullptr;
    check(c360_toy_scene(resolved.at("height").get<int>(), &im, &d));
    image.reset(im);
    depth.reset(d);
    if (a.write_scene) {
      check(c360_grid_save_pfm(image.get(), (dir / "scene_image.pfm").string().c_str()));
      check(c360_grid_save_pfm(depth.get(), (dir / "scene_depth.pfm").string().c_str()));
    }
  } else {
    image = load_grid(a.image);
    depth = load_grid(a.depth);
  }

  const Json options = {{"iterations", a.iterations}, {"learning_rate", a.lr}, {"momentum", a.momentum},
                        {"loss", a.loss}};
  char* rep = nullptr;
  check(c360_traintoy(model.get(), image.get(), depth.get(), options.dump().c_str(), &rep));
  Json report = parse(take(rep), "report");

  // wall-clock lives in its own file so report.json is reproducible byte for byte
  const double seconds = report.at("seconds").get<double>();
  report.erase("seconds");
  report["config"] = resolved;
  report["config_hash"] = hash_of({{"model", resolved}, {"train", options}});
  write_text(dir / "report.json", report.dump(2) + "\n");
  write_text(dir / "run_info.json", Json({{"seconds", seconds}}).dump(2) + "\n");
  if (!a.save_checkpoint.empty()) save_checkpoint(model.get(), a.save_checkpoint);

  const double initial = report.at("initial_loss").get<double>();
  const double final_loss = report.at("final_loss").get<double>();
  const Json& m = report.at("final_metrics");
  std::printf("traintoy seed %llu, %d iterations, lr %g: loss %.5f -> %.5f (%.1f%% reduction)\n",
              static_cast<unsigned long long>(resolved.at("seed").get<std::uint64_t>()), a.iterations, a.lr,
              initial, final_loss, initial > 0 ? 100.0 * (1.0 - final_loss / initial) : 0.0);
  std::printf("  AbsRel %.4f  RMSE %.4f  d1 %.2f%%  (%.1fs)\n", m.at("abs_rel").get<double>(),
              m.at("rmse").get<double>(), m.at("delta1").get<double>(), seconds);
}

struct EvalArgs {
  std::string pred;
  std::string gt;
  std::string mask;
  double max_depth = 10.0;
  std::vector<double> bins;
};

void cmd_eval(const Globals& g, const EvalArgs& a) {
  GridPtr pred = load_grid(a.pred);
  GridPtr gt = load_grid(a.gt);
  if (!a.mask.empty()) check(c360_grid_load_mask(gt.get(), a.mask.c_str()));
  char* rep = nullptr;
  check(c360_evaluate(pred.get(), gt.get(), nullptr, a.max_depth, a.bins.empty() ? nullptr : a.bins.data(),
                      a.bins.size(), &rep));
  Json report = parse(take(rep), "metrics");
  write_text(out_dir(g) / "metrics.json", report.dump(2) + "\n");
  std::printf("AbsRel %.4f  SqRel %.4f  RMSE %.4f  d1 %.2f%%  d2 %.2f%%  d3 %.2f%%  (%lld px)\n",
              report["abs_rel"].get<double>(), report["sq_rel"].get<double>(), report["rmse"].get<double>(),
              report["delta1"].get<double>(), report["delta2"].get<double>(), report["delta3"].get<double>(),
              report["valid_pixels"].get<long long>());
  for (const auto& b : report["bins"]) {
    const std::string range = fmt1(b["range_m"][0].get<double>()) + "-" + fmt1(b["range_m"][1].get<double>()) + " m";
    std::printf("  %-12s %6.2f%%", range.c_str(), 100.0 * b["pixel_fraction"].get<double>());
    if (b["abs_rel"].is_null()) {
      std::printf("  (empty)\n");
    } else {
      std::printf("  AbsRel %.4f  RMSE %.4f  d1 %.2f%%\n", b["abs_rel"].get<double>(), b["rmse"].get<double>(),
                  b["delta1"].get<double>());
    }
  }
}

int cmd_gradcheck(const Globals& g, const std::string& corrupt_op) {
  char* rep = nullptr;
  int ok = 0;
  check(c360_gradcheck(g.seed, corrupt_op.empty() ? nullptr : corrupt_op.c_str(), &rep, &ok));
  const Json report = parse(take(rep), "gradcheck");
  write_text(out_dir(g) / "gradcheck.json", report.dump(2) + "\n");
  std::printf("seed %llu  step %g\n", static_cast<unsigned long long>(report["seed"].get<std::uint64_t>()),
              report["step"].get<double>());
  std::printf("%-26s %12s %10s %6s  %s\n", "op", "max rel err", "tolerance", "coords", "result");
  for (const auto& e : report["entries"]) {
    std::printf("%-26s %12.3e %10.0e %6d  %s\n", e["op"].get<std::string>().c_str(),
                e["max_rel_error"].get<double>(), e["tolerance"].get<double>(), e["coordinates"].get<int>(),
                e["passed"].get<bool>() ? "ok" : "FAIL");
  }
  if (!ok) {
    std::string failed;
    for (const auto& f : report["failed"]) failed += (failed.empty() ? "" : ", ") + f.get<std::string>();
    std::fprintf(stderr, "gradient check failed: %s\n", failed.c_str());
    return kExitNumeric;
  }
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"cross360: tangent-patch depth estimation for 360 panoramas"};
  app.require_subcommand(1);
  app.fallthrough();
  Globals g;
  app.add_option("--seed", g.seed, "random seed (overrides the config)")
      ->each([&](const std::string&) { g.seed_set = true; });
  app.add_option("--config", g.config, "JSON config file")->check(CLI::ExistingFile);
  app.add_option("--output-dir", g.output_dir, "directory for outputs");

  LayoutArgs la;
  auto* layout = app.add_subcommand("layout", "print and save a patch layout");
  layout->add_option("--preset", la.preset, "layout preset");
  layout->add_option("--resolution", la.resolution, "patch resolution in pixels");
  layout->add_option("--lon-offset", la.lon_offset, "extra longitude rotation in degrees");
  layout->add_flag("--list", la.list, "list preset names");

  ProjectArgs pa;
  auto* project = app.add_subcommand("project", "cut an ERP image into tangent patches");
  project->add_option("input", pa.input, "ERP image (.png or .pfm)")->required();
  project->add_option("--preset", pa.preset, "layout preset");
  project->add_option("--layout", pa.layout, "layout JSON (overrides --preset)");
  project->add_option("--resolution", pa.resolution, "patch resolution in pixels");
  project->add_option("--format", pa.format, "patch file format: png or pfm");

  StitchArgs sa;
  auto* stitch = app.add_subcommand("stitch", "blend tangent patches back into an ERP image");
  stitch->add_option("input_dir", sa.input_dir, "directory written by project")->required();
  stitch->add_option("--layout", sa.layout, "layout JSON (default input_dir/layout.json)");
  stitch->add_option("--height", sa.height, "output height");
  stitch->add_option("--width", sa.width, "output width");
  stitch->add_option("--output", sa.output, "output file name (.pfm or .png)");

  ForwardArgs fa;
  auto* forward = app.add_subcommand("forward", "run the depth network on one panorama");
  forward->add_option("--input", fa.input, "RGB ERP image");
  forward->add_option("--mask", fa.mask, "validity mask PNG for incomplete panoramas");
  forward->add_flag("--toy", fa.toy, "use the built-in synthetic room as input");
  forward->add_option("--checkpoint", fa.checkpoint, "checkpoint prefix (reads PREFIX.json and PREFIX.bin)");
  forward->add_option("--save-checkpoint", fa.save_checkpoint, "write the weights to PREFIX.json/.bin");
  forward->add_flag("--all-scales", fa.all_scales, "write every scale's depth map");
  forward->add_flag("--png16", fa.png16, "also write 16-bit PNG depth");

  TrainArgs ta;
  auto* train = app.add_subcommand("traintoy", "fit the network to one synthetic scene");
  train->add_option("--image", ta.image, "ERP image (default: built-in room)");
  train->add_option("--depth", ta.depth, "ground truth depth for --image");
  train->add_option("--iterations", ta.iterations, "gradient steps")->check(CLI::NonNegativeNumber);
  train->add_option("--lr", ta.lr, "step size")->check(CLI::PositiveNumber);
  train->add_option("--momentum", ta.momentum, "heavy-ball momentum (0 = plain descent)");
  train->add_option("--loss", ta.loss, "pixel loss")->check(CLI::IsMember({"mse", "berhu"}));
  train->add_flag("--write-scene", ta.write_scene, "save the built-in scene as PFM");
  train->add_option("--save-checkpoint", ta.save_checkpoint, "write trained weights to PREFIX.json/.bin");

  EvalArgs ea;
  auto* eval = app.add_subcommand("eval", "depth metrics for a prediction");
  eval->add_option("--pred", ea.pred, "predicted depth")->required();
  eval->add_option("--gt", ea.gt, "ground truth depth")->required();
  eval->add_option("--mask", ea.mask, "validity mask PNG");
  eval->add_option("--max-depth", ea.max_depth, "ignore ground truth beyond this (m)");
  eval->add_option("--bins", ea.bins, "distance bin edges in m")->delimiter(',');

  std::string corrupt_op;
  auto* grad = app.add_subcommand("gradcheck", "finite-difference check of every gradient rule");
  grad->add_option("--corrupt-op", corrupt_op)->group("");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? kExitOk : kExitValidation;
  }

  try {
    if (*layout) cmd_layout(g, la);
    if (*project) cmd_project(g, pa);
    if (*stitch) cmd_stitch(g, sa);
    if (*forward) cmd_forward(g, fa);
    if (*train) cmd_traintoy(g, ta);
    if (*eval) cmd_eval(g, ea);
    if (*grad) return cmd_gradcheck(g, corrupt_op);
  } catch (const Failure& f) {
    std::fprintf(stderr, "error: %s\n", f.message.c_str());
    return f.code;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kExitInternal;
  }
  return kExitOk;
}
