#pragma once

// Depth evaluation over valid pixels: relative and absolute errors, threshold
// accuracies (as percentages) and per-distance-bin breakdowns.

#include <optional>
#include <vector>

#include "cross360/grid.hpp"

namespace cross360 {

inline constexpr double kDefaultMaxDepth = 10.0;

std::vector<double> default_bin_edges();  // 0, 2, 4, 6, 8, 10 m

struct DistanceBin {
  double lo = 0.0;
  double hi = 0.0;
  double pixel_fraction = 0.0;
  std::size_t pixels = 0;
  std::optional<double> abs_rel;
  std::optional<double> rmse;
  std::optional<double> delta1;
};

struct DepthMetricsReport {
  double abs_rel = 0.0;
  double sq_rel = 0.0;
  double rmse = 0.0;
  double delta1 = 0.0;
  double delta2 = 0.0;
  double delta3 = 0.0;
  std::vector<DistanceBin> bins;
  std::size_t valid_pixels = 0;
  double max_depth = kDefaultMaxDepth;
};

/// Valid pixels: finite, 0 < gt <= max_depth, mask (explicit and gt's own) set.
std::vector<std::uint8_t> valid_depth_pixels(const Grid& pred, const Grid& gt, const Mask* mask,
                                             double max_depth);

/// Throws DegenerateInputError if no pixel is valid. Predictions are never clamped.
DepthMetricsReport depth_metrics(const Grid& pred, const Grid& gt, const Mask* mask = nullptr,
                                 double max_depth = kDefaultMaxDepth,
                                 const std::vector<double>& bin_edges = default_bin_edges());

/// Bins are [lo, hi) over gt; fractions are relative to all valid pixels.
std::vector<DistanceBin> binned_metrics(const Grid& pred, const Grid& gt, const Mask* mask = nullptr,
                                        const std::vector<double>& bin_edges = default_bin_edges(),
                                        double max_depth = kDefaultMaxDepth);

}  // namespace cross360
