#include "cross360/losses.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "cross360/error.hpp"
#include "cross360/ops.hpp"

namespace cross360 {

using nn::Node;
using nn::Tensor;

namespace {

void check_pair(const Tensor& pred, const Grid& gt, const char* name) {
  gt.check();
  if (gt.channels != 1 || pred.numel() != gt.pixels()) {
    throw ShapeError(std::string(name) + ": prediction " + nn::shape_string(pred.shape()) +
                     " vs ground truth " + std::to_string(gt.channels) + "x" + std::to_string(gt.height) +
                     "x" + std::to_string(gt.width));
  }
}

double* pred_grad(Node& self) {
  auto& p = self.parents[0];
  return p->requires_grad ? p->ensure_grad().data() : nullptr;
}

double sign(double v) { return v > 0 ? 1.0 : (v < 0 ? -1.0 : 0.0); }

}  // namespace

Tensor masked_mse(const Tensor& pred, const Grid& gt, bool sum_reduction) {
  check_pair(pred, gt, "mse_loss");
  const auto pv = pred.value();
  double acc = 0.0;
  std::size_t count = 0;
  for (std::size_t p = 0; p < gt.pixels(); ++p) {
    if (!gt.valid(p)) continue;
    const double e = pv[p] - gt.data[p];
    acc += e * e;
    ++count;
  }
  if (count == 0) throw DegenerateInputError("mse_loss: no valid pixels");
  const double norm = sum_reduction ? 1.0 : 1.0 / static_cast<double>(count);
  return nn::make_result("mse_loss", {}, {acc * norm}, {pred}, [gt, norm](Node& self) {
    double* g = pred_grad(self);
    if (!g) return;
    const auto& pv = self.parents[0]->value;
    for (std::size_t p = 0; p < gt.pixels(); ++p) {
      if (gt.valid(p)) g[p] += self.grad[0] * norm * 2.0 * (pv[p] - gt.data[p]);
    }
  });
}

SobelResponse sobel_at(std::span<const double> plane, int width, int row, int col) {
  auto v = [&](int dr, int dc) { return plane[static_cast<std::size_t>(row + dr) * width + col + dc]; };
  const double gx = (v(-1, 1) + 2.0 * v(0, 1) + v(1, 1)) - (v(-1, -1) + 2.0 * v(0, -1) + v(1, -1));
  const double gy = (v(1, -1) + 2.0 * v(1, 0) + v(1, 1)) - (v(-1, -1) + 2.0 * v(-1, 0) + v(-1, 1));
  return {gx, gy};
}

std::optional<Tensor> sobel_gradient_loss(const Tensor& pred, const Grid& gt, bool magnitude) {
  check_pair(pred, gt, "gradient_loss");
  const int h = gt.height;
  const int w = gt.width;
  if (h < 3 || w < 3) return std::nullopt;

  std::vector<int> interior;
  for (int r = 1; r + 1 < h; ++r) {
    for (int c = 1; c + 1 < w; ++c) {
      bool ok = true;
      for (int dr = -1; dr <= 1 && ok; ++dr) {
        for (int dc = -1; dc <= 1 && ok; ++dc) ok = gt.valid(r + dr, c + dc);
      }
      if (ok) interior.push_back(r * w + c);
    }
  }
  if (interior.empty()) throw DegenerateInputError("gradient_loss: no valid interior pixels");

  constexpr double kMagnitudeFloor = 1e-12;
  const auto pv = pred.value();
  std::span<const double> gv(gt.data);
  double acc = 0.0;
  for (int idx : interior) {
    const auto sp = sobel_at(pv, w, idx / w, idx % w);
    const auto sg = sobel_at(gv, w, idx / w, idx % w);
    if (magnitude) {
      acc += std::abs(std::sqrt(sp.gx * sp.gx + sp.gy * sp.gy + kMagnitudeFloor) -
                      std::sqrt(sg.gx * sg.gx + sg.gy * sg.gy + kMagnitudeFloor));
    } else {
      acc += 0.5 * (std::abs(std::abs(sp.gx) - std::abs(sg.gx)) + std::abs(std::abs(sp.gy) - std::abs(sg.gy)));
    }
  }
  const double norm = 1.0 / static_cast<double>(interior.size());
  return nn::make_result(
      "gradient_loss", {}, {acc * norm}, {pred},
      [gt, w, norm, magnitude, interior = std::move(interior)](Node& self) {
        double* g = pred_grad(self);
        if (!g) return;
        const auto& pv = self.parents[0]->value;
        std::span<const double> gv(gt.data);
        const double scale = self.grad[0] * norm;
        for (int idx : interior) {
          const int r = idx / w;
          const int c = idx % w;
          const auto sp = sobel_at(pv, w, r, c);
          const auto sg = sobel_at(gv, w, r, c);
          double dgx = 0.0;
          double dgy = 0.0;
          if (magnitude) {
            const double mp = std::sqrt(sp.gx * sp.gx + sp.gy * sp.gy + kMagnitudeFloor);
            const double mg = std::sqrt(sg.gx * sg.gx + sg.gy * sg.gy + kMagnitudeFloor);
            const double outer = sign(mp - mg);
            dgx = outer * sp.gx / mp;
            dgy = outer * sp.gy / mp;
          } else {
            dgx = 0.5 * sign(std::abs(sp.gx) - std::abs(sg.gx)) * sign(sp.gx);
            dgy = 0.5 * sign(std::abs(sp.gy) - std::abs(sg.gy)) * sign(sp.gy);
          }
          dgx *= scale;
          dgy *= scale;
          auto at = [&](int dr, int dc) -> double& { return g[static_cast<std::size_t>(r + dr) * w + c + dc]; };
          // transpose of the two Sobel stencils
          at(-1, 1) += dgx;
          at(0, 1) += 2.0 * dgx;
          at(1, 1) += dgx;
          at(-1, -1) -= dgx;
          at(0, -1) -= 2.0 * dgx;
          at(1, -1) -= dgx;
          at(1, -1) += dgy;
          at(1, 0) += 2.0 * dgy;
          at(1, 1) += dgy;
          at(-1, -1) -= dgy;
          at(-1, 0) -= 2.0 * dgy;
          at(-1, 1) -= dgy;
        }
      });
}

Tensor masked_berhu(const Tensor& pred, const Grid& gt) {
  check_pair(pred, gt, "berhu_loss");
  const auto pv = pred.value();
  std::size_t count = 0;
  double max_err = 0.0;
  std::size_t argmax = 0;
  for (std::size_t p = 0; p < gt.pixels(); ++p) {
    if (!gt.valid(p)) continue;
    ++count;
    const double e = std::abs(pv[p] - gt.data[p]);
    if (e > max_err) {
      max_err = e;
      argmax = p;
    }
  }
  if (count == 0) throw DegenerateInputError("berhu_loss: no valid pixels");
  const double c = 0.2 * max_err;
  double acc = 0.0;
  if (c > 0.0) {
    for (std::size_t p = 0; p < gt.pixels(); ++p) {
      if (!gt.valid(p)) continue;
      const double e = pv[p] - gt.data[p];
      acc += std::abs(e) <= c ? std::abs(e) : (e * e + c * c) / (2.0 * c);
    }
  }
  const double norm = 1.0 / static_cast<double>(count);
  return nn::make_result("berhu_loss", {}, {acc * norm}, {pred}, [gt, c, argmax, norm](Node& self) {
    double* g = pred_grad(self);
    if (!g || c <= 0.0) return;
    const auto& pv = self.parents[0]->value;
    const double scale = self.grad[0] * norm;
    double d_c = 0.0;
    for (std::size_t p = 0; p < gt.pixels(); ++p) {
      if (!gt.valid(p)) continue;
      const double e = pv[p] - gt.data[p];
      if (std::abs(e) <= c) {
        g[p] += scale * sign(e);
      } else {
        g[p] += scale * e / c;
        d_c += 0.5 - e * e / (2.0 * c * c);
      }
    }
    // the threshold itself depends on the largest error
    const double e_max = pv[argmax] - gt.data[argmax];
    g[argmax] += scale * d_c * 0.2 * sign(e_max);
  });
}

namespace {

void check_scales(std::span<const Tensor> preds, std::span<const Grid> gts) {
  if (preds.size() != gts.size() || preds.empty()) {
    throw ShapeError("loss needs one ground truth per predicted scale (" + std::to_string(preds.size()) +
                     " predictions, " + std::to_string(gts.size()) + " ground truths)");
  }
}

Tensor accumulate(const std::vector<Tensor>& terms) {
  Tensor total = terms.front();
  for (std::size_t i = 1; i < terms.size(); ++i) total = nn::add(total, terms[i]);
  return total;
}

}  // namespace

Tensor mse_loss(std::span<const Tensor> preds, std::span<const Grid> gts, const LossOptions& options) {
  check_scales(preds, gts);
  std::vector<Tensor> terms;
  for (std::size_t s = 0; s < preds.size(); ++s) terms.push_back(masked_mse(preds[s], gts[s], options.sum_reduction));
  return accumulate(terms);
}

Tensor gradient_loss(std::span<const Tensor> preds, std::span<const Grid> gts, const LossOptions& options) {
  check_scales(preds, gts);
  std::vector<Tensor> terms;
  for (std::size_t s = 0; s < preds.size(); ++s) {
    if (auto t = sobel_gradient_loss(preds[s], gts[s], options.gradient_magnitude)) terms.push_back(*t);
  }
  if (terms.empty()) return Tensor::scalar(0.0);
  return accumulate(terms);
}

Tensor berhu_loss(std::span<const Tensor> preds, std::span<const Grid> gts) {
  check_scales(preds, gts);
  std::vector<Tensor> terms;
  for (std::size_t s = 0; s < preds.size(); ++s) terms.push_back(masked_berhu(preds[s], gts[s]));
  return accumulate(terms);
}

LossResult total_loss(std::span<const Tensor> preds, std::span<const Grid> gts, const LossOptions& options) {
  check_scales(preds, gts);
  LossResult result;
  std::vector<Tensor> pixel_terms;
  std::vector<Tensor> grad_terms;
  double mse_total = 0.0;
  for (std::size_t s = 0; s < preds.size(); ++s) {
    const Tensor mse = masked_mse(preds[s], gts[s], options.sum_reduction);
    mse_total += mse.item();
    Tensor pixel = options.pixel == PixelLoss::Berhu ? masked_berhu(preds[s], gts[s]) : mse;
    const auto grad = sobel_gradient_loss(preds[s], gts[s], options.gradient_magnitude);
    result.breakdown.per_scale.emplace_back(pixel.item(), grad ? grad->item() : 0.0);
    pixel_terms.push_back(pixel);
    if (grad) grad_terms.push_back(*grad);
  }
  const Tensor pixel_total = accumulate(pixel_terms);
  const Tensor grad_total = grad_terms.empty() ? Tensor::scalar(0.0) : accumulate(grad_terms);
  result.total = nn::add(pixel_total, grad_total);
  result.breakdown.mse = mse_total;
  result.breakdown.grad = grad_total.item();
  if (options.pixel == PixelLoss::Berhu) result.breakdown.berhu = pixel_total.item();
  result.breakdown.total = result.total.item();
  return result;
}

std::vector<std::uint8_t> gradient_loss_signature(std::span<const Tensor> preds, std::span<const Grid> gts,
                                                  bool magnitude) {
  check_scales(preds, gts);
  std::vector<std::uint8_t> sig;
  for (std::size_t s = 0; s < preds.size(); ++s) {
    const Grid& gt = gts[s];
    check_pair(preds[s], gt, "gradient_loss_signature");
    const int h = gt.height;
    const int w = gt.width;
    if (h < 3 || w < 3) continue;
    const auto pv = preds[s].value();
    std::span<const double> gv(gt.data);
    for (int r = 1; r + 1 < h; ++r) {
      for (int c = 1; c + 1 < w; ++c) {
        const auto sp = sobel_at(pv, w, r, c);
        const auto sg = sobel_at(gv, w, r, c);
        if (magnitude) {
          sig.push_back(std::hypot(sp.gx, sp.gy) > std::hypot(sg.gx, sg.gy));
        } else {
          sig.push_back(static_cast<std::uint8_t>((sp.gx > 0) | (sp.gy > 0) << 1 |
                                                  (std::abs(sp.gx) > std::abs(sg.gx)) << 2 |
                                                  (std::abs(sp.gy) > std::abs(sg.gy)) << 3));
        }
      }
    }
  }
  return sig;
}

std::vector<Grid> ground_truth_pyramid(const Grid& full, int scales) {
  full.check();
  if (full.channels != 1) throw ShapeError("ground truth must have one channel");
  if (scales < 1) throw ConfigError("ground truth pyramid needs at least one scale");
  const int factor = 1 << (scales - 1);
  if (full.height % factor != 0 || full.width % factor != 0) {
    throw ShapeError("ground truth size not divisible by 2^(scales-1)");
  }
  std::vector<Grid> pyramid{full};
  if (!pyramid.back().mask) pyramid.back().mask = Mask(full.pixels(), 1);
  for (int s = 1; s < scales; ++s) {
    const Grid& fine = pyramid.back();
    Grid coarse(1, fine.height / 2, fine.width / 2);
    coarse.mask = Mask(coarse.pixels(), 0);
    for (int r = 0; r < coarse.height; ++r) {
      for (int c = 0; c < coarse.width; ++c) {
        double acc = 0.0;
        int valid = 0;
        for (int dr = 0; dr < 2; ++dr) {
          for (int dc = 0; dc < 2; ++dc) {
            if (fine.valid(2 * r + dr, 2 * c + dc)) {
              acc += fine.at(0, 2 * r + dr, 2 * c + dc);
              ++valid;
            }
          }
        }
        coarse.at(0, r, c) = valid > 0 ? acc / valid : 0.0;
        (*coarse.mask)[static_cast<std::size_t>(r) * coarse.width + c] = valid >= 3 ? 1 : 0;
      }
    }
    pyramid.push_back(std::move(coarse));
  }
  std::reverse(pyramid.begin(), pyramid.end());
  return pyramid;
}

}  // namespace cross360
