#pragma once

// Multi-scale depth supervision: masked MSE, Sobel gradient loss and the
// reverse Huber (BerHu) pixel loss. Ground truth grids carry their own masks.

#include <cstdint>
#include <optional>
#include <span>
#include <utility>
#include <vector>

#include "cross360/grid.hpp"
#include "cross360/tensor.hpp"

namespace cross360 {

enum class PixelLoss { Mse, Berhu };

struct LossOptions {
  PixelLoss pixel = PixelLoss::Mse;
  /// Sum squared errors instead of averaging them per scale.
  bool sum_reduction = false;
  /// Compare sqrt(gx^2 + gy^2) instead of per-direction |gx|, |gy|.
  bool gradient_magnitude = false;
};

struct LossBreakdown {
  double mse = 0.0;
  double grad = 0.0;
  std::optional<double> berhu;
  double total = 0.0;
  std::vector<std::pair<double, double>> per_scale;  // (pixel term, gradient term)
};

struct LossResult {
  nn::Tensor total;
  LossBreakdown breakdown;
};

/// Per-scale terms. pred is [1, h, w] (or [h, w]) and must match gt.
nn::Tensor masked_mse(const nn::Tensor& pred, const Grid& gt, bool sum_reduction = false);
/// Returns nullopt for grids smaller than 3x3, which have no interior pixels.
std::optional<nn::Tensor> sobel_gradient_loss(const nn::Tensor& pred, const Grid& gt,
                                              bool magnitude = false);
/// Threshold c = 0.2 * max |error| over the valid pixels of this scale.
nn::Tensor masked_berhu(const nn::Tensor& pred, const Grid& gt);

nn::Tensor mse_loss(std::span<const nn::Tensor> preds, std::span<const Grid> gts,
                    const LossOptions& options = {});
nn::Tensor gradient_loss(std::span<const nn::Tensor> preds, std::span<const Grid> gts,
                         const LossOptions& options = {});
nn::Tensor berhu_loss(std::span<const nn::Tensor> preds, std::span<const Grid> gts);

/// Mse mode: mse + grad. Berhu mode: berhu + grad.
LossResult total_loss(std::span<const nn::Tensor> preds, std::span<const Grid> gts,
                      const LossOptions& options = {});

/// Ground truth per scale, coarsest first: 2x2 masked area averages, with a
/// coarse pixel valid when at least 3 of its 4 children are valid.
std::vector<Grid> ground_truth_pyramid(const Grid& full_resolution, int scales);

/// Sobel responses used by the gradient loss (exposed for tests).
struct SobelResponse {
  double gx = 0.0;
  double gy = 0.0;
};
SobelResponse sobel_at(std::span<const double> plane, int width, int row, int col);

/// Which side of each |.| kink of the gradient loss the predictions sit on.
/// Two inputs with equal signatures lie in the same smooth piece.
std::vector<std::uint8_t> gradient_loss_signature(std::span<const nn::Tensor> preds, std::span<const Grid> gts,
                                                  bool magnitude = false);

}  // namespace cross360
