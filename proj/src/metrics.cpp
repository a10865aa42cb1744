#include "cross360/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "cross360/error.hpp"

namespace cross360 {

namespace {

struct Accumulator {
  double abs_rel = 0.0;
  double sq_rel = 0.0;
  double sq = 0.0;
  std::size_t within[3] = {0, 0, 0};
  std::size_t n = 0;

  void add(double d, double g) {
    const double e = d - g;
    abs_rel += std::abs(e) / g;
    sq_rel += e * e / g;
    sq += e * e;
    const double ratio = std::max(d / g, g / d);
    double threshold = 1.25;
    for (auto& w : within) {
      if (ratio < threshold) ++w;
      threshold *= 1.25;
    }
    ++n;
  }
  double pct(int i) const { return 100.0 * static_cast<double>(within[i]) / static_cast<double>(n); }
};

void check_inputs(const Grid& pred, const Grid& gt, const Mask* mask) {
  pred.check();
  gt.check();
  if (pred.channels != 1 || gt.channels != 1 || pred.height != gt.height || pred.width != gt.width) {
    throw ShapeError("metrics need single-channel pred and gt of equal size");
  }
  if (mask && mask->size() != gt.pixels()) throw ShapeError("metric mask length does not match the depth maps");
}

}  // namespace

std::vector<double> default_bin_edges() { return {0.0, 2.0, 4.0, 6.0, 8.0, 10.0}; }

std::vector<std::uint8_t> valid_depth_pixels(const Grid& pred, const Grid& gt, const Mask* mask, double max_depth) {
  check_inputs(pred, gt, mask);
  std::vector<std::uint8_t> valid(gt.pixels(), 0);
  for (std::size_t p = 0; p < gt.pixels(); ++p) {
    const double g = gt.data[p];
    const double d = pred.data[p];
    valid[p] = gt.valid(p) && (!mask || (*mask)[p]) && std::isfinite(g) && std::isfinite(d) && g > 0.0 &&
               g <= max_depth;
  }
  return valid;
}

std::vector<DistanceBin> binned_metrics(const Grid& pred, const Grid& gt, const Mask* mask,
                                        const std::vector<double>& edges, double max_depth) {
  if (edges.size() < 2) throw ValidationError("bin edges need at least two values");
  for (std::size_t i = 1; i < edges.size(); ++i) {
    if (!(edges[i] > edges[i - 1])) throw ValidationError("bin edges must be strictly ascending");
  }
  const auto valid = valid_depth_pixels(pred, gt, mask, max_depth);
  const auto total = static_cast<std::size_t>(std::count(valid.begin(), valid.end(), 1));
  std::vector<Accumulator> acc(edges.size() - 1);
  for (std::size_t p = 0; p < valid.size(); ++p) {
    if (!valid[p]) continue;
    const double g = gt.data[p];
    for (std::size_t b = 0; b + 1 < edges.size(); ++b) {
      if (g >= edges[b] && g < edges[b + 1]) {
        acc[b].add(pred.data[p], g);
        break;
      }
    }
  }
  std::vector<DistanceBin> bins;
  for (std::size_t b = 0; b < acc.size(); ++b) {
    DistanceBin bin;
    bin.lo = edges[b];
    bin.hi = edges[b + 1];
    bin.pixels = acc[b].n;
    bin.pixel_fraction = total ? static_cast<double>(acc[b].n) / static_cast<double>(total) : 0.0;
    if (acc[b].n > 0) {
      const double n = static_cast<double>(acc[b].n);
      bin.abs_rel = acc[b].abs_rel / n;
      bin.rmse = std::sqrt(acc[b].sq / n);
      bin.delta1 = acc[b].pct(0);
    }
    bins.push_back(bin);
  }
  return bins;
}

DepthMetricsReport depth_metrics(const Grid& pred, const Grid& gt, const Mask* mask, double max_depth,
                                 const std::vector<double>& bin_edges) {
  if (!(max_depth > 0.0)) throw ValidationError("max_depth must be positive");
  const auto valid = valid_depth_pixels(pred, gt, mask, max_depth);
  Accumulator acc;
  for (std::size_t p = 0; p < valid.size(); ++p) {
    if (valid[p]) acc.add(pred.data[p], gt.data[p]);
  }
  if (acc.n == 0) throw DegenerateInputError("depth_metrics: no valid pixels");
  DepthMetricsReport r;
  const double n = static_cast<double>(acc.n);
  r.abs_rel = acc.abs_rel / n;
  r.sq_rel = acc.sq_rel / n;
  r.rmse = std::sqrt(acc.sq / n);
  r.delta1 = acc.pct(0);
  r.delta2 = acc.pct(1);
  r.delta3 = acc.pct(2);
  r.valid_pixels = acc.n;
  r.max_depth = max_depth;
  r.bins = binned_metrics(pred, gt, mask, bin_edges, max_depth);
  return r;
}

}  // namespace cross360
