#include "cross360/layout.hpp"

#include <algorithm>
#include <cmath>

#include "cross360/error.hpp"

namespace cross360 {

int LayoutConfig::patch_count() const {
  int total = 0;
  for (const auto& row : rows) total += row.count;
  return total;
}

void LayoutConfig::validate() const {
  if (rows.empty()) throw ConfigError("layout '" + name + "' has no rows");
  if (!(fov > 0.0 && fov < kPi)) throw ConfigError("layout fov must lie in (0, 180) degrees");
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i].count <= 0) {
      throw ConfigError("layout '" + name + "' row " + std::to_string(i) + " has zero patches");
    }
    if (rows[i].lat < -kPi / 2 || rows[i].lat > kPi / 2) {
      throw ConfigError("layout row latitude out of range");
    }
    if (i > 0 && rows[i].lat < rows[i - 1].lat) {
      throw ConfigError("layout rows must be sorted by latitude");
    }
  }
  if (!std::isfinite(lon_offset)) throw ConfigError("non-finite lon_offset");
}

Layout build_layout(const LayoutConfig& config, int resolution) {
  config.validate();
  if (resolution < 1) throw ConfigError("patch resolution must be >= 1");
  Layout layout;
  layout.reserve(static_cast<std::size_t>(config.patch_count()));
  for (const auto& row : config.rows) {
    for (int i = 0; i < row.count; ++i) {
      const double lon = config.lon_offset + 2.0 * kPi * i / row.count;
      layout.push_back(TangentPlaneSpec{LatLon{row.lat, normalize_lon(lon)}, config.fov, resolution});
    }
  }
  return layout;
}

namespace {

LayoutConfig make_preset(std::string name, double fov_deg,
                         std::initializer_list<std::pair<double, int>> rows) {
  LayoutConfig config;
  config.name = std::move(name);
  config.fov = deg2rad(fov_deg);
  for (const auto& [lat_deg, count] : rows) config.rows.push_back({deg2rad(lat_deg), count});
  return config;
}

}  // namespace

std::map<int, LayoutConfig> ablation_presets() {
  return {
      {10, make_preset("ablation-10", 120.0, {{-60.0, 3}, {0.0, 4}, {60.0, 3}})},
      {18, make_preset("ablation-18", 90.0, {{-45.0, 5}, {0.0, 8}, {45.0, 5}})},
      {26, make_preset("ablation-26", 72.0,
                       {{-72.0, 3}, {-36.0, 6}, {0.0, 8}, {36.0, 6}, {72.0, 3}})},
      {46, make_preset("ablation-46", 60.0,
                       {{-72.0, 5}, {-36.0, 10}, {0.0, 16}, {36.0, 10}, {72.0, 5}})},
  };
}

std::vector<std::string> layout_preset_names() {
  return {"full-26", "clipped-20", "ablation-10", "ablation-18", "ablation-26", "ablation-46"};
}

LayoutConfig layout_preset(const std::string& name) {
  if (name == "full-26") {
    return make_preset("full-26", 72.0, {{-72.0, 3}, {-36.0, 6}, {0.0, 8}, {36.0, 6}, {72.0, 3}});
  }
  if (name == "clipped-20") {
    return make_preset("clipped-20", 72.0, {{-31.2, 6}, {0.0, 8}, {31.2, 6}});
  }
  for (const auto& [n, preset] : ablation_presets()) {
    if (preset.name == name) return preset;
  }
  std::string known;
  for (const auto& n : layout_preset_names()) known += (known.empty() ? "" : ", ") + n;
  throw ConfigError("unknown layout preset '" + name + "' (known: " + known + ")");
}

bool patch_contains(const TangentPlaneSpec& spec, const LatLon& p) {
  const auto t = gnomonic_forward(p, spec.center);
  if (!t) return false;
  const double extent = spec.half_extent() * (1.0 + 1e-12);
  return std::abs(t->x) <= extent && std::abs(t->y) <= extent;
}

double coverage_fraction(const Layout& layout, double grid_step) {
  if (!(grid_step > 0.0)) throw ValidationError("coverage grid step must be positive");
  const int n_lat = std::max(1, static_cast<int>(std::lround(kPi / grid_step)));
  const int n_lon = std::max(1, static_cast<int>(std::lround(2.0 * kPi / grid_step)));
  const double lat_step = kPi / n_lat;
  const double lon_step = 2.0 * kPi / n_lon;
  double covered = 0.0;
  double total = 0.0;
  for (int i = 0; i < n_lat; ++i) {
    const double lat = -kPi / 2 + (i + 0.5) * lat_step;
    const double weight = std::cos(lat);
    for (int j = 0; j < n_lon; ++j) {
      const LatLon p{lat, -kPi + (j + 0.5) * lon_step};
      total += weight;
      if (std::any_of(layout.begin(), layout.end(),
                      [&](const TangentPlaneSpec& s) { return patch_contains(s, p); })) {
        covered += weight;
      }
    }
  }
  return covered / total;
}

}  // namespace cross360
