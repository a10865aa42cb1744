#pragma once

// Central finite-difference checks for every differentiable op and for the
// full-model training loss.

#include <cstdint>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include "cross360/tensor.hpp"

namespace cross360 {

inline constexpr double kGradcheckStep = 1e-4;
inline constexpr double kMicroOpTolerance = 1e-4;
inline constexpr double kFullModelTolerance = 1e-3;

struct GradcheckEntry {
  std::string op;
  double max_rel_error = 0.0;
  double tolerance = 0.0;
  int coordinates = 0;
  int skipped = 0;  // coordinates whose +-step straddled a kink
  bool passed = false;
};

struct GradcheckReport {
  std::uint64_t seed = 0;
  double step = kGradcheckStep;
  std::vector<GradcheckEntry> entries;

  bool all_passed() const;
  std::vector<std::string> failed_ops() const;
};

/// Scalar-valued function of the inputs; it must rebuild its graph on every call.
using ScalarFn = std::function<nn::Tensor(const std::vector<nn::Tensor>&)>;

/// Returns an identifier of the smooth piece the last fn call evaluated in.
using KinkSignatureFn = std::function<std::vector<std::uint8_t>()>;

struct GradientCheckOptions {
  double step = kGradcheckStep;
  int max_coords = -1;  // per input; < 0 checks every coordinate
  KinkSignatureFn signature;
};

struct GradientCheckResult {
  double max_rel_error = 0.0;
  int checked = 0;
  int skipped = 0;
};

/// max |analytic - numeric| / max |numeric| over the checked coordinates of
/// every input that requires grad. With a signature, coordinates whose two
/// probes land in different smooth pieces are skipped.
GradientCheckResult gradient_error(const ScalarFn& fn, const std::vector<nn::Tensor>& inputs,
                                   std::mt19937_64& rng, const GradientCheckOptions& options = {});

/// Runs the whole suite. corrupt_op (test hook) scales that op's gradient.
GradcheckReport run_gradcheck(std::uint64_t seed, const std::string& corrupt_op = "",
                              bool include_model = true);

}  // namespace cross360
