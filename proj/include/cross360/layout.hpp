#pragma once

// Tangent-patch layouts: rows of equally spaced patch centers at fixed
// latitudes, plus the presets used for the full, clipped and ablation setups.

#include <map>
#include <string>
#include <vector>

#include "cross360/geometry.hpp"

namespace cross360 {

struct LayoutRow {
  double lat = 0.0;  // radians
  int count = 0;
};

struct LayoutConfig {
  std::string name;
  std::vector<LayoutRow> rows;
  double fov = deg2rad(72.0);
  double lon_offset = 0.0;

  int patch_count() const;
  void validate() const;
};

using Layout = std::vector<TangentPlaneSpec>;

/// Centers within a row start at lon_offset and are spaced 2*pi/count apart.
Layout build_layout(const LayoutConfig& config, int resolution);

/// Named presets: "full-26", "clipped-20", "ablation-10", "ablation-18",
/// "ablation-26", "ablation-46". Throws ConfigError listing the known names.
LayoutConfig layout_preset(const std::string& name);
std::vector<std::string> layout_preset_names();

/// Patch count -> preset for the patch-count ablation (10, 18, 26, 46).
std::map<int, LayoutConfig> ablation_presets();

/// cos(lat)-weighted fraction of the sphere that lands inside at least one
/// patch's square tangent extent, sampled on a lat/lon grid of cell centers.
double coverage_fraction(const Layout& layout, double grid_step = deg2rad(1.0));

/// True if the point projects inside the patch's square tangent extent.
bool patch_contains(const TangentPlaneSpec& spec, const LatLon& p);

}  // namespace cross360
