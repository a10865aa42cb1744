#pragma once

// JSON forms of layouts, model configs and reports.

#include <nlohmann/json.hpp>

#include "cross360/layout.hpp"
#include "cross360/losses.hpp"
#include "cross360/metrics.hpp"
#include "cross360/model.hpp"

namespace cross360 {

using Json = nlohmann::json;

/// Throws ConfigError with the offending key on malformed input.
Json layout_config_to_json(const LayoutConfig& config);
LayoutConfig layout_config_from_json(const Json& j);

/// Explicit patch list: {"patches": [{index, lat_deg, lon_deg, fov_deg}], "resolution": r}.
Json layout_to_json(const Layout& layout);
Layout layout_from_json(const Json& j, int default_resolution = 24);

Json model_config_to_json(const ModelConfig& config);
/// Missing keys keep their defaults.
ModelConfig model_config_from_json(const Json& j, ModelConfig base = {});

Json metrics_to_json(const DepthMetricsReport& report);
Json loss_to_json(const LossBreakdown& loss);

/// 64-bit FNV-1a of the compact dump, as 16 hex digits.
std::string config_hash(const Json& config);

/// Parses text as JSON; ConfigError naming `what` on failure.
Json parse_json(const std::string& text, const std::string& what);

}  // namespace cross360
