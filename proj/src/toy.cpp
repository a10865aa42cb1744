#include "cross360/toy.hpp"

#include <array>
#include <chrono>
#include <cmath>
#include <limits>
#include <string>

#include "cross360/error.hpp"
#include "cross360/geometry.hpp"

namespace cross360 {

namespace {

struct Wall {
  int axis;     // 0 x, 1 y, 2 z
  double at;    // plane coordinate relative to the camera
  double albedo;
};

// Room relative to the camera: x in [-2.2, 3.3], y in [-1.9, 2.6], z in [-1.5, 1.2].
constexpr std::array<Wall, 6> kWalls{{
    {0, -2.2, 0.55}, {0, 3.3, 0.75}, {1, -1.9, 0.65}, {1, 2.6, 0.45}, {2, -1.5, 0.35}, {2, 1.2, 0.85},
}};

}  // namespace

ToyScene make_toy_scene(int height, int width) {
  if (height <= 0 || width != 2 * height) throw ConfigError("toy scene needs W = 2H");
  ToyScene scene{Grid(3, height, width), Grid(1, height, width)};
  for (int r = 0; r < height; ++r) {
    for (int c = 0; c < width; ++c) {
      const LatLon p = erp_pixel_to_latlon(r, c, height, width);
      const std::array<double, 3> dir{std::cos(p.lat) * std::cos(p.lon), std::cos(p.lat) * std::sin(p.lon),
                                      std::sin(p.lat)};
      double t = std::numeric_limits<double>::infinity();
      int hit = 0;
      for (int w = 0; w < static_cast<int>(kWalls.size()); ++w) {
        const double d = dir[kWalls[w].axis];
        if (std::abs(d) < 1e-12) continue;
        const double s = kWalls[w].at / d;
        if (s > 0.0 && s < t) {
          t = s;
          hit = w;
        }
      }
      const Wall& wall = kWalls[hit];
      const double incidence = std::abs(dir[wall.axis]);
      double albedo = wall.albedo;
      if (wall.axis == 2) {
        const double u = t * dir[0];
        const double v = t * dir[1];
        const bool odd = (static_cast<int>(std::floor(u / 0.9)) + static_cast<int>(std::floor(v / 0.9))) & 1;
        albedo += odd ? 0.1 : -0.1;
      }
      scene.depth.at(0, r, c) = t;
      scene.image.at(0, r, c) = std::min(1.0, 1.2 / t);
      scene.image.at(1, r, c) = incidence;
      scene.image.at(2, r, c) = albedo;
    }
  }
  return scene;
}

ToyTrainReport train_toy(Model& model, const Grid& image, const Grid& depth, const TrainOptions& options,
                         const TrainCallback& on_iteration) {
  if (options.iterations < 0) throw ConfigError("iteration count must be non-negative");
  if (!(options.learning_rate > 0.0) || !std::isfinite(options.learning_rate)) {
    throw ConfigError("learning rate must be positive");
  }
  if (options.momentum < 0.0 || options.momentum >= 1.0) throw ConfigError("momentum must lie in [0, 1)");
  const auto& config = model.config();
  if (depth.channels != 1 || depth.height != config.height || depth.width != config.width) {
    throw ShapeError("ground-truth depth does not match the configured input size");
  }
  const auto start = std::chrono::steady_clock::now();
  const std::vector<Grid> gts = ground_truth_pyramid(depth, config.scales);
  auto& store = model.params();
  std::vector<std::vector<double>> velocity;
  if (options.momentum > 0.0) {
    for (const auto& t : store.tensors()) velocity.emplace_back(t.numel(), 0.0);
  }

  ToyTrainReport report;
  report.seed = config.seed;
  report.iterations = options.iterations;
  auto evaluate = [&](int iteration, bool with_grad) {
    const StageFeatures f = model.forward(image);
    LossResult loss = total_loss(f.depths, gts, options.loss);
    if (!std::isfinite(loss.breakdown.total)) {
      throw NumericError("loss is not finite at iteration " + std::to_string(iteration));
    }
    if (with_grad) {
      store.zero_grad();
      nn::backward(loss.total);
    }
    return std::make_pair(loss.breakdown, f.depths.back());
  };

  for (int it = 0; it < options.iterations; ++it) {
    const auto [loss, pred] = evaluate(it, true);
    report.series.push_back(loss);
    if (on_iteration) on_iteration(it, loss);
    if (velocity.empty()) {
      store.sgd_step(options.learning_rate);
    } else {
      for (std::size_t p = 0; p < store.tensors().size(); ++p) {
        nn::Tensor t = store.tensors()[p];
        auto value = t.mutable_value();
        const auto grad = t.grad();
        for (std::size_t i = 0; i < value.size(); ++i) {
          velocity[p][i] = options.momentum * velocity[p][i] + grad[i];
          value[i] -= options.learning_rate * velocity[p][i];
        }
      }
    }
  }
  nn::NoGradGuard no_grad;
  const auto [final_loss, pred] = evaluate(options.iterations, false);
  report.final_loss = final_loss.total;
  report.initial_loss = report.series.empty() ? final_loss.total : report.series.front().total;
  Grid pred_grid = to_grid(pred);
  report.final_metrics = depth_metrics(pred_grid, depth, depth.mask ? &*depth.mask : nullptr);
  report.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return report;
}

}  // namespace cross360
