#include "cross360/resampler.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "cross360/error.hpp"

namespace cross360 {

BilinearTaps bilinear_taps(int height, int width, double row, double col, bool wrap_lon) {
  const double r = std::clamp(row, 0.0, static_cast<double>(height - 1));
  const int r0 = static_cast<int>(std::floor(r));
  const int r1 = std::min(r0 + 1, height - 1);
  const double fr = r - r0;

  int c0 = 0;
  int c1 = 0;
  double fc = 0.0;
  if (wrap_lon) {
    const double base = std::floor(col);
    fc = col - base;
    const long long b = static_cast<long long>(base);
    c0 = static_cast<int>(((b % width) + width) % width);
    c1 = (c0 + 1) % width;
  } else {
    const double c = std::clamp(col, 0.0, static_cast<double>(width - 1));
    c0 = static_cast<int>(std::floor(c));
    c1 = std::min(c0 + 1, width - 1);
    fc = c - c0;
  }

  BilinearTaps taps;
  taps.index = {r0 * width + c0, r0 * width + c1, r1 * width + c0, r1 * width + c1};
  taps.weight = {(1.0 - fr) * (1.0 - fc), (1.0 - fr) * fc, fr * (1.0 - fc), fr * fc};
  return taps;
}

std::vector<double> bilinear_sample(const Grid& src, double row, double col, bool wrap_lon) {
  if (src.empty()) throw ValidationError("bilinear_sample on an empty grid");
  const BilinearTaps taps = bilinear_taps(src.height, src.width, row, col, wrap_lon);
  std::vector<double> out(static_cast<std::size_t>(src.channels), 0.0);
  for (int c = 0; c < src.channels; ++c) {
    const auto plane = src.plane(c);
    double acc = 0.0;
    for (int k = 0; k < 4; ++k) acc += taps.weight[k] * plane[taps.index[k]];
    out[c] = acc;
  }
  return out;
}

SamplingPlan erp_to_tangent_plan(int src_height, int src_width, const Layout& layout) {
  if (src_height <= 0 || src_width <= 0) throw ValidationError("empty ERP source");
  if (layout.empty()) throw ValidationError("empty layout");
  const int res = layout.front().resolution;
  for (const auto& spec : layout) {
    if (spec.resolution != res) throw ValidationError("layout specs must share one resolution");
  }
  SamplingPlan plan;
  plan.source_planes = 1;
  plan.source_pixels = src_height * src_width;
  plan.output_pixels = static_cast<int>(layout.size()) * res * res;
  plan.offsets.reserve(plan.output_pixels + 1);
  plan.contributions.reserve(plan.output_pixels);
  plan.offsets.push_back(0);
  for (const auto& spec : layout) {
    for (int r = 0; r < res; ++r) {
      for (int c = 0; c < res; ++c) {
        const LatLon p = patch_pixel_to_latlon(r, c, spec);
        const PixelCoord px = latlon_to_erp_pixel(p, src_height, src_width);
        plan.contributions.push_back({1.0, 0, bilinear_taps(src_height, src_width, px.row, px.col, true)});
        plan.offsets.push_back(static_cast<int>(plan.contributions.size()));
      }
    }
  }
  return plan;
}

SamplingPlan tangent_to_erp_plan(const Layout& layout, int out_height, int out_width,
                                 double gamma) {
  if (out_height <= 0 || out_width <= 0) throw ValidationError("empty ERP target");
  if (layout.empty()) throw ValidationError("empty layout");
  const int res = layout.front().resolution;
  SamplingPlan plan;
  plan.source_planes = static_cast<int>(layout.size());
  plan.source_pixels = res * res;
  plan.output_pixels = out_height * out_width;
  plan.offsets.reserve(plan.output_pixels + 1);
  plan.offsets.push_back(0);
  for (int r = 0; r < out_height; ++r) {
    for (int c = 0; c < out_width; ++c) {
      const LatLon p = erp_pixel_to_latlon(r, c, out_height, out_width);
      for (std::size_t n = 0; n < layout.size(); ++n) {
        const auto& spec = layout[n];
        const auto t = gnomonic_forward(p, spec.center);
        if (!t) continue;
        // slack so points exactly on an edge land inside regardless of rounding
        const double extent = spec.half_extent() * (1.0 + 1e-12);
        if (std::abs(t->x) > extent || std::abs(t->y) > extent) continue;
        const double cos_c = 1.0 / std::sqrt(1.0 + t->x * t->x + t->y * t->y);
        const PixelCoord px = tangent_to_patch_pixel(*t, spec);
        plan.contributions.push_back({std::pow(cos_c, gamma), static_cast<int>(n),
                                      bilinear_taps(res, res, px.row, px.col, false)});
      }
      plan.offsets.push_back(static_cast<int>(plan.contributions.size()));
    }
  }
  return plan;
}

LinearResampler bake(const SamplingPlan& plan, const Mask* source_mask) {
  const std::size_t total_source =
      static_cast<std::size_t>(plan.source_planes) * plan.source_pixels;
  if (source_mask && source_mask->size() != total_source) {
    throw ShapeError("source mask has " + std::to_string(source_mask->size()) +
                     " entries, plan expects " + std::to_string(total_source));
  }
  LinearResampler op;
  op.input_pixels = static_cast<int>(total_source);
  op.output_pixels = plan.output_pixels;
  op.row_offsets.reserve(plan.output_pixels + 1);
  op.row_offsets.push_back(0);
  op.output_mask.assign(plan.output_pixels, 0);

  struct Kept {
    double blend;
    double tap_total;
    const SamplingPlan::Contribution* contribution;
  };
  std::vector<Kept> kept;
  for (int p = 0; p < plan.output_pixels; ++p) {
    kept.clear();
    double blend_total = 0.0;
    for (int k = plan.offsets[p]; k < plan.offsets[p + 1]; ++k) {
      const auto& contrib = plan.contributions[k];
      const std::size_t base = static_cast<std::size_t>(contrib.source) * plan.source_pixels;
      double tap_total = 0.0;
      for (int t = 0; t < 4; ++t) {
        if (!source_mask || (*source_mask)[base + contrib.taps.index[t]]) {
          tap_total += contrib.taps.weight[t];
        }
      }
      if (source_mask && tap_total < 0.5) continue;
      if (!source_mask) tap_total = 1.0;
      kept.push_back({contrib.blend, tap_total, &contrib});
      blend_total += contrib.blend;
    }
    if (!kept.empty() && blend_total > 0.0) {
      op.output_mask[p] = 1;
      for (const auto& kc : kept) {
        const auto& contrib = *kc.contribution;
        const int base = contrib.source * plan.source_pixels;
        const double scale = kc.blend / blend_total / kc.tap_total;
        for (int t = 0; t < 4; ++t) {
          const int column = base + contrib.taps.index[t];
          if (source_mask && !(*source_mask)[column]) continue;
          op.columns.push_back(column);
          op.weights.push_back(contrib.taps.weight[t] * scale);
        }
      }
    }
    op.row_offsets.push_back(static_cast<int>(op.weights.size()));
  }
  return op;
}

void LinearResampler::apply(std::span<const double> in, std::span<double> out, int channels) const {
  const std::size_t in_stride = input_pixels;
  const std::size_t out_stride = output_pixels;
  for (int c = 0; c < channels; ++c) {
    const double* src = in.data() + c * in_stride;
    double* dst = out.data() + c * out_stride;
    for (int p = 0; p < output_pixels; ++p) {
      double acc = 0.0;
      for (int k = row_offsets[p]; k < row_offsets[p + 1]; ++k) acc += weights[k] * src[columns[k]];
      dst[p] = acc;
    }
  }
}

void LinearResampler::apply_transpose(std::span<const double> out_grad, std::span<double> in_grad,
                                      int channels) const {
  const std::size_t in_stride = input_pixels;
  const std::size_t out_stride = output_pixels;
  for (int c = 0; c < channels; ++c) {
    const double* g = out_grad.data() + c * out_stride;
    double* dst = in_grad.data() + c * in_stride;
    for (int p = 0; p < output_pixels; ++p) {
      for (int k = row_offsets[p]; k < row_offsets[p + 1]; ++k) dst[columns[k]] += weights[k] * g[p];
    }
  }
}

void PatchSet::check() const {
  if (specs.size() != grids.size()) {
    throw ValidationError("patch set has " + std::to_string(specs.size()) + " specs but " +
                          std::to_string(grids.size()) + " grids");
  }
  if (grids.empty()) throw ValidationError("empty patch set");
  const int channels = grids.front().channels;
  for (std::size_t n = 0; n < grids.size(); ++n) {
    const auto& g = grids[n];
    g.check();
    const int res = specs[n].resolution;
    if (g.channels != channels || g.height != res || g.width != res ||
        res != specs.front().resolution) {
      throw ValidationError("patch " + std::to_string(n) +
                            " does not match the shared channel count and resolution");
    }
  }
}

PatchSet erp_to_tangent(const Grid& src, const Layout& layout) {
  src.check();
  if (src.empty()) throw ValidationError("erp_to_tangent on an empty grid");
  const SamplingPlan plan = erp_to_tangent_plan(src.height, src.width, layout);
  const LinearResampler op = bake(plan, src.mask ? &*src.mask : nullptr);
  std::vector<double> flat(static_cast<std::size_t>(src.channels) * plan.output_pixels);
  op.apply(src.data, flat, src.channels);

  const int res = layout.front().resolution;
  const std::size_t per_patch = static_cast<std::size_t>(res) * res;
  PatchSet out;
  out.specs = layout;
  out.grids.reserve(layout.size());
  for (std::size_t n = 0; n < layout.size(); ++n) {
    Grid g(src.channels, res, res);
    for (int c = 0; c < src.channels; ++c) {
      const double* from = flat.data() + c * static_cast<std::size_t>(plan.output_pixels) + n * per_patch;
      std::copy(from, from + per_patch, g.plane(c).begin());
    }
    if (src.mask) {
      g.mask = Mask(op.output_mask.begin() + n * per_patch, op.output_mask.begin() + (n + 1) * per_patch);
    }
    out.grids.push_back(std::move(g));
  }
  return out;
}

Grid tangent_to_erp(const PatchSet& patches, int out_height, int out_width, double gamma) {
  patches.check();
  const SamplingPlan plan = tangent_to_erp_plan(patches.specs, out_height, out_width, gamma);
  const int channels = patches.grids.front().channels;
  const std::size_t per_patch = patches.grids.front().pixels();
  const std::size_t n_patches = patches.grids.size();

  bool any_mask = false;
  for (const auto& g : patches.grids) any_mask = any_mask || g.mask.has_value();
  Mask source_mask;
  if (any_mask) {
    source_mask.reserve(n_patches * per_patch);
    for (const auto& g : patches.grids) {
      if (g.mask) {
        source_mask.insert(source_mask.end(), g.mask->begin(), g.mask->end());
      } else {
        source_mask.insert(source_mask.end(), per_patch, 1);
      }
    }
  }
  const LinearResampler op = bake(plan, any_mask ? &source_mask : nullptr);

  // gather patches into the [channels, patch-major pixels] layout the operator expects
  std::vector<double> flat(static_cast<std::size_t>(channels) * n_patches * per_patch);
  for (std::size_t n = 0; n < n_patches; ++n) {
    for (int c = 0; c < channels; ++c) {
      const auto plane = patches.grids[n].plane(c);
      std::copy(plane.begin(), plane.end(), flat.begin() + (c * n_patches + n) * per_patch);
    }
  }
  Grid out(channels, out_height, out_width);
  op.apply(flat, out.data, channels);
  out.mask = op.output_mask;
  return out;
}

}  // namespace cross360
