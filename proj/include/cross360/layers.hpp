#pragma once

#include <cstdint>
#include <vector>

#include "cross360/ops.hpp"

namespace cross360::nn {

struct AttentionConfig {
  int heads = 4;
  int model_dim = 0;
  /// Divide logits by sqrt(head width). Off reproduces the unscaled softmax(q k^T).
  bool scaled = true;

  int head_dim() const { return model_dim / heads; }
  void validate() const;
};

struct CrossAttentionParams {
  Tensor wq, wk, wv;  // each [d, d]
};

/// q = query_src Wq, k = kv_src Wk, v = kv_src Wv, out = softmax(q k^T / sqrt(d)) v.
/// Single head. key_mask drops invalid key/value rows.
Tensor cross_attention(const Tensor& query_src, const Tensor& kv_src,
                       const CrossAttentionParams& params, bool scaled = true,
                       const std::vector<std::uint8_t>* key_mask = nullptr);

struct MhsaParams {
  Tensor wq, wk, wv, wo;  // each [d, d]
  Tensor bo;              // [d]
};

/// tokens + (concat_h attention_h(tokens)) Wo + bo.
Tensor mhsa(const Tensor& tokens, const AttentionConfig& config, const MhsaParams& params);

}  // namespace cross360::nn
