#include "cross360/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <memory>
#include <numeric>

#include "cross360/error.hpp"
#include "cross360/layers.hpp"
#include "cross360/layout.hpp"
#include "cross360/losses.hpp"
#include "cross360/model.hpp"
#include "cross360/ops.hpp"
#include "cross360/resampler.hpp"

namespace cross360 {

using nn::Tensor;

bool GradcheckReport::all_passed() const {
  return std::all_of(entries.begin(), entries.end(), [](const auto& e) { return e.passed; });
}

std::vector<std::string> GradcheckReport::failed_ops() const {
  std::vector<std::string> out;
  for (const auto& e : entries) {
    if (!e.passed) out.push_back(e.op);
  }
  return out;
}

GradientCheckResult gradient_error(const ScalarFn& fn, const std::vector<Tensor>& inputs, std::mt19937_64& rng,
                                   const GradientCheckOptions& options) {
  for (auto t : inputs) t.zero_grad();
  const Tensor loss = fn(inputs);
  if (loss.numel() != 1) throw ValidationError("gradient check needs a scalar function");
  nn::backward(loss);

  nn::NoGradGuard no_grad;
  const double step = options.step;
  GradientCheckResult result;
  double max_diff = 0.0;
  double max_numeric = 0.0;
  for (auto t : inputs) {
    if (!t.requires_grad()) continue;
    const std::vector<double> analytic(t.grad().begin(), t.grad().end());
    std::vector<std::size_t> coords(t.numel());
    std::iota(coords.begin(), coords.end(), 0);
    if (options.max_coords >= 0 && coords.size() > static_cast<std::size_t>(options.max_coords)) {
      std::shuffle(coords.begin(), coords.end(), rng);
      coords.resize(static_cast<std::size_t>(options.max_coords));
      std::sort(coords.begin(), coords.end());
    }
    auto values = t.mutable_value();
    for (std::size_t i : coords) {
      const double saved = values[i];
      values[i] = saved + step;
      const double up = fn(inputs).item();
      std::vector<std::uint8_t> sig_up;
      if (options.signature) sig_up = options.signature();
      values[i] = saved - step;
      const double down = fn(inputs).item();
      values[i] = saved;
      if (options.signature && options.signature() != sig_up) {
        ++result.skipped;
        continue;
      }
      const double numeric = (up - down) / (2.0 * step);
      max_diff = std::max(max_diff, std::abs(analytic[i] - numeric));
      max_numeric = std::max(max_numeric, std::abs(numeric));
      ++result.checked;
    }
  }
  result.max_rel_error = max_diff / std::max(max_numeric, 1e-12);
  return result;
}

namespace {

class Suite {
 public:
  Suite(std::uint64_t seed, GradcheckReport& report) : rng_(seed), report_(report) {}

  Tensor random(nn::Shape shape, double lo = -1.0, double hi = 1.0, bool grad = true) {
    std::uniform_real_distribution<double> dist(lo, hi);
    std::vector<double> v(nn::shape_numel(shape));
    for (double& x : v) x = dist(rng_);
    return Tensor::from(std::move(shape), std::move(v), grad);
  }

  /// Projects a tensor-valued op onto fixed random weights.
  ScalarFn project(std::function<Tensor(const std::vector<Tensor>&)> op, nn::Shape out_shape) {
    auto w = random(std::move(out_shape), -1.0, 1.0, false);
    std::vector<double> weights(w.value().begin(), w.value().end());
    return [op = std::move(op), weights](const std::vector<Tensor>& in) {
      return nn::weighted_sum(op(in), weights);
    };
  }

  void check(const std::string& name, const ScalarFn& fn, const std::vector<Tensor>& inputs,
             double tolerance = kMicroOpTolerance, const GradientCheckOptions& options = {}) {
    GradcheckEntry e;
    e.op = name;
    e.tolerance = tolerance;
    const auto r = gradient_error(fn, inputs, rng_, options);
    e.max_rel_error = r.max_rel_error;
    e.coordinates = r.checked;
    e.skipped = r.skipped;
    e.passed = std::isfinite(e.max_rel_error) && e.max_rel_error <= tolerance;
    report_.entries.push_back(e);
  }

  std::mt19937_64& rng() { return rng_; }

 private:
  std::mt19937_64 rng_;
  GradcheckReport& report_;
};

Grid random_depth(std::mt19937_64& rng, int h, int w, bool with_hole) {
  std::uniform_real_distribution<double> dist(1.0, 4.0);
  Grid g(1, h, w);
  for (double& v : g.data) v = dist(rng);
  g.mask = Mask(g.pixels(), 1);
  if (with_hole) (*g.mask)[0] = 0;
  return g;
}

void micro_ops(Suite& s) {
  using V = std::vector<Tensor>;
  {
    auto a = s.random({3, 4}), b = s.random({3, 4});
    s.check("add", s.project([](const V& in) { return nn::add(in[0], in[1]); }, {3, 4}), {a, b});
    s.check("sub", s.project([](const V& in) { return nn::sub(in[0], in[1]); }, {3, 4}), {a, b});
    s.check("mul", s.project([](const V& in) { return nn::mul(in[0], in[1]); }, {3, 4}), {a, b});
    s.check("scale", s.project([](const V& in) { return nn::scale(in[0], -1.7); }, {3, 4}), {a});
    s.check("sum", [](const V& in) { return nn::scale(nn::sum(in[0]), 0.3); }, {a});
    s.check("reshape", s.project([](const V& in) { return nn::reshape(in[0], {2, 6}); }, {2, 6}), {a});
    s.check("transpose", s.project([](const V& in) { return nn::transpose(in[0]); }, {4, 3}), {a});
  }
  {
    auto a = s.random({3, 4}), b = s.random({4, 5}), bias = s.random({5});
    s.check("matmul", s.project([](const V& in) { return nn::matmul(in[0], in[1]); }, {3, 5}), {a, b});
    s.check("linear", s.project([](const V& in) { return nn::linear(in[0], in[1], in[2]); }, {3, 5}), {a, b, bias});
  }
  {
    auto x = s.random({4, 5}, -3.0, 3.0);
    s.check("silu", s.project([](const V& in) { return nn::silu(in[0]); }, {4, 5}), {x});
    s.check("sigmoid", s.project([](const V& in) { return nn::sigmoid(in[0]); }, {4, 5}), {x});
    s.check("softplus", s.project([](const V& in) { return nn::softplus(in[0]); }, {4, 5}), {x});
    s.check("softmax_rows", s.project([](const V& in) { return nn::softmax_rows(in[0]); }, {4, 5}), {x});
  }
  {
    auto q = s.random({5, 8}), k = s.random({6, 8}), v = s.random({6, 8});
    s.check("attention",
            s.project([](const V& in) { return nn::attention(in[0], in[1], in[2], 2, 1.0 / std::sqrt(4.0)); }, {5, 8}),
            {q, k, v});
    auto mask = std::make_shared<Mask>(Mask{1, 0, 1, 1, 0, 1});
    s.check("attention_masked",
            s.project([mask](const V& in) { return nn::attention(in[0], in[1], in[2], 1, 0.5, mask.get()); }, {5, 8}),
            {q, k, v});
  }
  {
    const int d = 4;
    auto src = s.random({5, d}), kv = s.random({7, d});
    auto wq = s.random({d, d}), wk = s.random({d, d}), wv = s.random({d, d});
    s.check("cross_attention", s.project([](const V& in) {
      return nn::cross_attention(in[0], in[1], {in[2], in[3], in[4]});
    }, {5, d}), {src, kv, wq, wk, wv});
    auto wo = s.random({d, d}), bo = s.random({d});
    s.check("mhsa", s.project([](const V& in) {
      return nn::mhsa(in[0], nn::AttentionConfig{2, 4, true}, {in[1], in[2], in[3], in[4], in[5]});
    }, {5, d}), {src, wq, wk, wv, wo, bo});
  }
  {
    auto a = s.random({2, 3, 4}), b = s.random({3, 3, 4});
    s.check("concat_channels", s.project([](const V& in) { return nn::concat_channels({in[0], in[1]}); }, {5, 3, 4}),
            {a, b});
  }
  {
    auto x = s.random({2, 5, 7}), k = s.random({3, 2, 3, 3}), b = s.random({3});
    s.check("conv3x3", s.project([](const V& in) { return nn::conv3x3(in[0], in[1], in[2]); }, {3, 5, 7}), {x, k, b});
    s.check("conv3x3_zero_pad", s.project([](const V& in) {
      return nn::conv3x3(in[0], in[1], in[2], {nn::Padding::Zero, nn::Padding::Zero});
    }, {3, 5, 7}), {x, k, b});
    auto w = s.random({3, 2});
    s.check("conv1x1", s.project([](const V& in) { return nn::conv1x1(in[0], in[1]); }, {3, 5, 7}), {x, w});
  }
  {
    auto x = s.random({2, 3, 4});
    s.check("upsample2x", s.project([](const V& in) { return nn::upsample2x(in[0]); }, {2, 6, 8}), {x});
    s.check("downsample2x", s.project([](const V& in) { return nn::downsample2x(in[0]); }, {2, 1, 2}), {s.random({2, 2, 4})});
    s.check("global_avg_pool", s.project([](const V& in) { return nn::global_avg_pool(in[0]); }, {2}), {x});
    s.check("broadcast_channels", s.project([](const V& in) { return nn::broadcast_channels(in[0], 3, 2); }, {4, 3, 2}),
            {s.random({4})});
  }
  {
    LayoutConfig lc = layout_preset("ablation-10");
    const Layout layout = build_layout(lc, 3);
    auto op = std::make_shared<const LinearResampler>(bake(erp_to_tangent_plan(6, 12, layout)));
    const int out = op->output_pixels;
    s.check("resample", s.project([op, out](const V& in) { return nn::resample(in[0], op, {out}); }, {2, out}),
            {s.random({2, 6, 12})});
  }
  {
    auto x = s.random({3, 4, 4}, -2.0, 2.0);
    auto ml = s.random({3}), vl = s.random({3}), g = s.random({3}, 0.5, 1.5), b = s.random({3});
    s.check("switchable_norm", s.project([](const V& in) {
      return nn::switchable_norm(in[0], {in[1], in[2], in[3], in[4]});
    }, {3, 4, 4}), {x, ml, vl, g, b});
  }
  {
    auto& rng = s.rng();
    const Grid gt = random_depth(rng, 5, 5, true);
    auto pred = s.random({1, 5, 5}, 1.0, 4.0);
    s.check("mse_loss", [gt](const V& in) { return masked_mse(in[0], gt); }, {pred});
    const std::vector<Grid> gts{gt};
    auto last = std::make_shared<std::vector<Tensor>>();
    GradientCheckOptions kinks;
    kinks.signature = [gts, last] { return gradient_loss_signature(*last, gts); };
    s.check("gradient_loss", [gt, last](const V& in) {
      *last = {in[0]};
      return *sobel_gradient_loss(in[0], gt);
    }, {pred}, kMicroOpTolerance, kinks);
    GradientCheckOptions magnitude_kinks;
    magnitude_kinks.signature = [gts, last] { return gradient_loss_signature(*last, gts, true); };
    s.check("gradient_loss_magnitude", [gt, last](const V& in) {
      *last = {in[0]};
      return *sobel_gradient_loss(in[0], gt, true);
    }, {pred}, kMicroOpTolerance, magnitude_kinks);
    s.check("berhu_loss", [gt](const V& in) { return masked_berhu(in[0], gt); }, {pred});
  }
}

ModelConfig gradcheck_model_config(std::uint64_t seed) {
  ModelConfig c;
  c.scales = 5;
  c.channels = {4, 4, 4, 4, 4};
  c.heads = 2;
  c.patch_resolutions = {2, 2, 3, 3};
  c.height = 16;
  c.width = 32;
  c.seed = seed;
  return c;
}

void full_model(Suite& s, std::uint64_t seed) {
  Model model(gradcheck_model_config(seed));
  auto& rng = s.rng();
  std::uniform_real_distribution<double> dist(0.0, 1.0);
  Grid image(3, 16, 32);
  for (double& v : image.data) v = dist(rng);
  Grid depth(1, 16, 32);
  for (int r = 0; r < 16; ++r) {
    for (int c = 0; c < 32; ++c) depth.at(0, r, c) = 1.5 + 0.8 * std::sin(0.4 * r + 0.3 * c) + 0.2 * dist(rng);
  }
  const auto gts = ground_truth_pyramid(depth, 5);
  const Tensor input = from_grid(image);
  auto last_depths = std::make_shared<std::vector<Tensor>>();
  const ScalarFn loss = [&model, &gts, input, last_depths](const std::vector<Tensor>&) {
    *last_depths = model.forward(input).depths;
    return total_loss(*last_depths, gts).total;
  };
  GradientCheckOptions options;
  options.max_coords = 24;
  options.signature = [&gts, last_depths] { return gradient_loss_signature(*last_depths, gts); };
  s.check("model_total_loss", loss, model.params().tensors(), kFullModelTolerance, options);
}

}  // namespace

GradcheckReport run_gradcheck(std::uint64_t seed, const std::string& corrupt_op, bool include_model) {
  GradcheckReport report;
  report.seed = seed;
  struct FaultReset {
    ~FaultReset() { nn::set_gradient_fault(""); }
  } reset;
  nn::set_gradient_fault(corrupt_op);
  Suite suite(seed, report);
  micro_ops(suite);
  if (include_model) full_model(suite, seed);
  return report;
}

}  // namespace cross360
