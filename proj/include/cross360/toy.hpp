#pragma once

// Analytic box room rendered to ERP (exact per-pixel depth) and the gradient
// descent loop that fits the model to it.

#include <cstdint>
#include <functional>
#include <vector>

#include "cross360/grid.hpp"
#include "cross360/losses.hpp"
#include "cross360/metrics.hpp"
#include "cross360/model.hpp"

namespace cross360 {

struct ToyScene {
  Grid image;  // [3, H, W] in [0, 1]
  Grid depth;  // [1, H, W], Euclidean distance to the first wall hit (m)
};

/// Camera sits off-center in a 5.5 x 4.5 x 2.7 m room. Channels: inverse-depth
/// shading, incidence cosine, per-wall albedo with a floor/ceiling checker.
ToyScene make_toy_scene(int height = 64, int width = 128);

struct TrainOptions {
  int iterations = 200;
  double learning_rate = 1e-3;
  double momentum = 0.0;
  LossOptions loss;
};

struct ToyTrainReport {
  std::vector<LossBreakdown> series;  // loss before each step
  double initial_loss = 0.0;
  double final_loss = 0.0;            // after the last step
  DepthMetricsReport final_metrics;   // on D_S after training
  double seconds = 0.0;
  std::uint64_t seed = 0;
  int iterations = 0;
};

using TrainCallback = std::function<void(int iteration, const LossBreakdown& loss)>;

/// Throws NumericError naming the iteration if the loss turns non-finite.
ToyTrainReport train_toy(Model& model, const Grid& image, const Grid& depth, const TrainOptions& options,
                         const TrainCallback& on_iteration = {});

}  // namespace cross360
