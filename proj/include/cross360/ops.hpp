#pragma once

// Differentiable micro-ops over nn::Tensor. Feature maps are [c, h, w],
// token sets are [n, d], matrices are row-major.

#include <cstdint>
#include <memory>
#include <span>
#include <vector>

#include "cross360/resampler.hpp"
#include "cross360/tensor.hpp"

namespace cross360::nn {

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double factor);
Tensor sum(const Tensor& a);
/// sum_i a_i * weights_i with constant weights.
Tensor weighted_sum(const Tensor& a, std::span<const double> weights);

Tensor reshape(const Tensor& a, Shape shape);
Tensor transpose(const Tensor& a);  // [n, m] -> [m, n]
Tensor matmul(const Tensor& a, const Tensor& b);
/// y = x W + b; b may be undefined.
Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b = {});

Tensor silu(const Tensor& a);
Tensor sigmoid(const Tensor& a);
/// log(1 + e^x), computed without overflow.
Tensor softplus(const Tensor& a);

/// Row-wise softmax of a [n, m] tensor with max subtraction.
Tensor softmax_rows(const Tensor& x);

/// Fused multi-head scaled dot-product attention. q is [n_q, d], k and v are
/// [n_kv, d]; head h uses columns [h*d/heads, (h+1)*d/heads). Keys whose
/// key_mask entry is 0 are excluded; a query with no valid key outputs 0.
/// Attention rows are recomputed during backward instead of stored.
Tensor attention(const Tensor& q, const Tensor& k, const Tensor& v, int heads, double logit_scale,
                 const std::vector<std::uint8_t>* key_mask = nullptr);

/// Concatenates [c_i, h, w] tensors along the channel axis.
Tensor concat_channels(const std::vector<Tensor>& parts);

enum class Padding { Circular, Replicate, Zero };

struct ConvPadding {
  Padding horizontal = Padding::Circular;  // longitude continuity
  Padding vertical = Padding::Replicate;
};

/// Same-size 3x3 convolution (cross-correlation). x [c_in, h, w],
/// kernel [c_out, c_in, 3, 3], bias [c_out] or undefined.
Tensor conv3x3(const Tensor& x, const Tensor& kernel, const Tensor& bias = {},
               ConvPadding padding = {});

/// 1x1 channel projection: weight [c_out, c_in].
Tensor conv1x1(const Tensor& x, const Tensor& weight, const Tensor& bias = {});

/// Bilinear 2x upsampling, align_corners = false. Columns wrap, rows clamp.
Tensor upsample2x(const Tensor& x);

/// 2x2 mean pooling; h and w must be even.
Tensor downsample2x(const Tensor& x);

/// Mean over h*w: [c, h, w] -> [c].
Tensor global_avg_pool(const Tensor& x);

/// [c] -> [c, h, w].
Tensor broadcast_channels(const Tensor& per_channel, int height, int width);

/// Applies a baked resampling operator to x [c, in_pixels...], producing
/// [c, out_shape...].
Tensor resample(const Tensor& x, std::shared_ptr<const LinearResampler> op, Shape out_spatial);

struct SwitchNormParams {
  Tensor mean_logits;  // [3]: instance, layer, batch
  Tensor var_logits;   // [3]
  Tensor gamma;        // [c]
  Tensor beta;         // [c]
};

inline constexpr double kNormEpsilon = 1e-5;

/// Switchable normalization of x [c, ...]. Statistics are taken per channel
/// (instance), over the whole tensor (layer), and per channel over the batch,
/// which for a single sample coincides with the instance statistics. Means and
/// variances are mixed by softmax(mean_logits) and softmax(var_logits).
Tensor switchable_norm(const Tensor& x, const SwitchNormParams& params,
                       double eps = kNormEpsilon);

}  // namespace cross360::nn
