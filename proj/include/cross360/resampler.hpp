#pragma once

// ERP <-> tangent-patch transport. Both directions are precomputed as sampling
// plans (lists of bilinear taps), then baked against an optional source mask
// into a sparse linear operator. The same operator drives the Grid-level
// functions below and the differentiable resampling op inside the network.

#include <array>
#include <span>
#include <vector>

#include "cross360/grid.hpp"
#include "cross360/layout.hpp"

namespace cross360 {

/// Default exponent of the cos(angular distance) blending weight.
inline constexpr double kBlendGamma = 4.0;

struct BilinearTaps {
  std::array<int, 4> index{};  // flat row * width + col
  std::array<double, 4> weight{};
};

/// Four taps around a fractional pixel position (integer = pixel center).
/// Rows are clamped to [0, height-1]; columns wrap modulo width when
/// wrap_lon is set and are clamped otherwise.
BilinearTaps bilinear_taps(int height, int width, double row, double col, bool wrap_lon);

/// Per-channel bilinear sample. Ignores the grid mask.
std::vector<double> bilinear_sample(const Grid& src, double row, double col, bool wrap_lon);

struct SamplingPlan {
  struct Contribution {
    double blend = 1.0;
    int source = 0;  // which source plane (patch index, or 0 for an ERP source)
    BilinearTaps taps;
  };

  int source_planes = 1;
  int source_pixels = 0;  // pixels per source plane
  int output_pixels = 0;
  std::vector<int> offsets;  // output_pixels + 1 entries into contributions
  std::vector<Contribution> contributions;
};

/// Output pixels are ordered patch-major: patch n, row, col.
SamplingPlan erp_to_tangent_plan(int src_height, int src_width, const Layout& layout);

/// Output pixels cover an out_height x out_width ERP grid. Each contribution
/// carries the cos^gamma weight of the angular distance to its patch center.
SamplingPlan tangent_to_erp_plan(const Layout& layout, int out_height, int out_width,
                                 double gamma = kBlendGamma);

/// CSR sparse operator out[c, p] = sum_k weight_k * in[c, column_k].
struct LinearResampler {
  int input_pixels = 0;
  int output_pixels = 0;
  std::vector<int> row_offsets;
  std::vector<int> columns;
  std::vector<double> weights;
  Mask output_mask;

  /// Both spans hold `channels` planes back to back.
  void apply(std::span<const double> in, std::span<double> out, int channels) const;
  /// Accumulates the transpose: in_grad += W^T out_grad.
  void apply_transpose(std::span<const double> out_grad, std::span<double> in_grad,
                       int channels) const;
  std::size_t nonzeros() const { return weights.size(); }
};

/// Resolves a plan against an optional source mask (source_planes *
/// source_pixels entries). Invalid taps get weight 0; a contribution whose
/// remaining tap weight is below 0.5 is dropped, otherwise its taps are
/// renormalized. Blend weights are normalized over the surviving
/// contributions; outputs with none are marked invalid and read 0.
LinearResampler bake(const SamplingPlan& plan, const Mask* source_mask = nullptr);

struct PatchSet {
  Layout specs;
  std::vector<Grid> grids;

  void check() const;
};

PatchSet erp_to_tangent(const Grid& src, const Layout& layout);
Grid tangent_to_erp(const PatchSet& patches, int out_height, int out_width,
                    double gamma = kBlendGamma);

}  // namespace cross360
