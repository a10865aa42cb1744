#include "cross360/serialize.hpp"

#include <algorithm>
#include <cstdio>

#include "cross360/error.hpp"

namespace cross360 {

namespace {

template <typename T>
T get_or(const Json& j, const char* key, T fallback) {
  if (!j.contains(key)) return fallback;
  try {
    return j.at(key).get<T>();
  } catch (const Json::exception& e) {
    throw ConfigError(std::string("bad value for '") + key + "': " + e.what());
  }
}

Json optional_number(const std::optional<double>& v) { return v ? Json(*v) : Json(nullptr); }

}  // namespace

Json parse_json(const std::string& text, const std::string& what) {
  try {
    return Json::parse(text);
  } catch (const Json::parse_error& e) {
    throw ConfigError(what + " is not valid JSON: " + e.what());
  }
}

Json layout_config_to_json(const LayoutConfig& c) {
  Json rows = Json::array();
  for (const auto& r : c.rows) rows.push_back({{"lat_deg", rad2deg(r.lat)}, {"count", r.count}});
  return {{"name", c.name}, {"fov_deg", rad2deg(c.fov)}, {"lon_offset_deg", rad2deg(c.lon_offset)}, {"rows", rows}};
}

LayoutConfig layout_config_from_json(const Json& j) {
  if (!j.is_object()) throw ConfigError("layout config must be a JSON object");
  LayoutConfig c;
  if (j.contains("preset")) c = layout_preset(j.at("preset").get<std::string>());
  c.name = get_or<std::string>(j, "name", c.name);
  if (j.contains("fov_deg")) c.fov = deg2rad(get_or<double>(j, "fov_deg", 72.0));
  if (j.contains("lon_offset_deg")) c.lon_offset = deg2rad(get_or<double>(j, "lon_offset_deg", 0.0));
  if (j.contains("rows")) {
    c.rows.clear();
    for (const auto& r : j.at("rows")) {
      if (!r.contains("lat_deg") || !r.contains("count")) throw ConfigError("layout rows need lat_deg and count");
      c.rows.push_back({deg2rad(r.at("lat_deg").get<double>()), r.at("count").get<int>()});
    }
  }
  c.validate();
  return c;
}

Json layout_to_json(const Layout& layout) {
  Json patches = Json::array();
  for (std::size_t i = 0; i < layout.size(); ++i) {
    const auto& s = layout[i];
    patches.push_back({{"index", i},
                       {"lat_deg", rad2deg(s.center.lat)},
                       {"lon_deg", rad2deg(s.center.lon)},
                       {"fov_deg", rad2deg(s.fov)}});
  }
  Json j = {{"patches", patches}};
  if (!layout.empty()) j["resolution"] = layout.front().resolution;
  return j;
}

Layout layout_from_json(const Json& j, int default_resolution) {
  if (!j.is_object() || !j.contains("patches") || !j.at("patches").is_array()) {
    throw ConfigError("layout JSON needs a 'patches' array");
  }
  const int resolution = get_or<int>(j, "resolution", default_resolution);
  if (resolution <= 0) throw ConfigError("layout resolution must be positive");
  Layout layout;
  for (const auto& p : j.at("patches")) {
    if (!p.contains("lat_deg") || !p.contains("lon_deg")) throw ConfigError("patch entries need lat_deg and lon_deg");
    TangentPlaneSpec spec;
    spec.center = LatLon::make(deg2rad(p.at("lat_deg").get<double>()), normalize_lon(deg2rad(p.at("lon_deg").get<double>())));
    spec.fov = deg2rad(get_or<double>(p, "fov_deg", 72.0));
    spec.resolution = resolution;
    if (!(spec.fov > 0.0 && spec.fov < kPi)) throw ConfigError("patch fov must lie in (0, 180) degrees");
    layout.push_back(spec);
  }
  if (layout.empty()) throw ConfigError("layout JSON has no patches");
  return layout;
}

Json model_config_to_json(const ModelConfig& c) {
  return {{"scales", c.scales},
          {"channels", c.channels},
          {"layout", c.layout},
          {"patch_resolutions", c.patch_resolutions},
          {"heads", c.heads},
          {"height", c.height},
          {"width", c.width},
          {"seed", c.seed},
          {"attention_scaling", c.attention_scaling},
          {"query_source", c.query_source == QuerySource::Aligned ? "aligned" : "decoded"},
          {"lon_offset_deg", rad2deg(c.lon_offset)}};
}

ModelConfig model_config_from_json(const Json& j, ModelConfig c) {
  if (!j.is_object()) throw ConfigError("model config must be a JSON object");
  static const char* kKnown[] = {"scales", "channels", "layout", "patch_resolutions", "heads", "height", "width",
                                 "seed", "attention_scaling", "query_source", "lon_offset_deg"};
  for (const auto& [key, value] : j.items()) {
    if (std::find(std::begin(kKnown), std::end(kKnown), key) == std::end(kKnown)) {
      throw ConfigError("unknown model config key '" + key + "'");
    }
  }
  c.scales = get_or(j, "scales", c.scales);
  c.channels = get_or(j, "channels", c.channels);
  c.layout = get_or(j, "layout", c.layout);
  c.patch_resolutions = get_or(j, "patch_resolutions", c.patch_resolutions);
  c.heads = get_or(j, "heads", c.heads);
  c.height = get_or(j, "height", c.height);
  c.width = get_or(j, "width", c.width);
  c.seed = get_or(j, "seed", c.seed);
  c.attention_scaling = get_or(j, "attention_scaling", c.attention_scaling);
  const auto qs = get_or<std::string>(j, "query_source", c.query_source == QuerySource::Aligned ? "aligned" : "decoded");
  if (qs == "decoded") {
    c.query_source = QuerySource::Decoded;
  } else if (qs == "aligned") {
    c.query_source = QuerySource::Aligned;
  } else {
    throw ConfigError("query_source must be 'decoded' or 'aligned', got '" + qs + "'");
  }
  c.lon_offset = deg2rad(get_or(j, "lon_offset_deg", rad2deg(c.lon_offset)));
  c.validate();
  return c;
}

Json metrics_to_json(const DepthMetricsReport& r) {
  Json bins = Json::array();
  for (const auto& b : r.bins) {
    bins.push_back({{"range_m", {b.lo, b.hi}},
                    {"pixel_fraction", b.pixel_fraction},
                    {"pixels", b.pixels},
                    {"abs_rel", optional_number(b.abs_rel)},
                    {"rmse", optional_number(b.rmse)},
                    {"delta1", optional_number(b.delta1)}});
  }
  return {{"abs_rel", r.abs_rel}, {"sq_rel", r.sq_rel}, {"rmse", r.rmse},
          {"delta1", r.delta1},   {"delta2", r.delta2}, {"delta3", r.delta3},
          {"valid_pixels", r.valid_pixels}, {"max_depth", r.max_depth}, {"bins", bins}};
}

Json loss_to_json(const LossBreakdown& l) {
  Json per_scale = Json::array();
  for (const auto& [pixel, grad] : l.per_scale) per_scale.push_back({pixel, grad});
  return {{"mse", l.mse}, {"grad", l.grad}, {"berhu", optional_number(l.berhu)}, {"total", l.total},
          {"per_scale", per_scale}};
}

std::string config_hash(const Json& config) {
  std::uint64_t h = 14695981039346656037ull;
  for (unsigned char ch : config.dump()) {
    h ^= ch;
    h *= 1099511628211ull;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

}  // namespace cross360
