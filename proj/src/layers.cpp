#include "cross360/layers.hpp"

#include <cmath>
#include <string>

#include "cross360/error.hpp"

namespace cross360::nn {

void AttentionConfig::validate() const {
  if (heads <= 0 || model_dim <= 0) throw ConfigError("attention heads and width must be positive");
  if (model_dim % heads != 0) {
    throw ConfigError("attention width " + std::to_string(model_dim) + " is not divisible by " +
                      std::to_string(heads) + " heads");
  }
}

namespace {

void check_square(const Tensor& w, int d, const char* name) {
  if (w.rank() != 2 || w.dim(0) != d || w.dim(1) != d) {
    throw ShapeError(std::string(name) + " must be [" + std::to_string(d) + ", " + std::to_string(d) +
                     "], got " + shape_string(w.shape()));
  }
}

}  // namespace

Tensor cross_attention(const Tensor& query_src, const Tensor& kv_src,
                       const CrossAttentionParams& params, bool scaled,
                       const std::vector<std::uint8_t>* key_mask) {
  if (query_src.rank() != 2 || kv_src.rank() != 2 || query_src.dim(1) != kv_src.dim(1)) {
    throw ShapeError("cross_attention query " + shape_string(query_src.shape()) + " vs key/value " +
                     shape_string(kv_src.shape()));
  }
  const int d = query_src.dim(1);
  check_square(params.wq, d, "W_q");
  check_square(params.wk, d, "W_k");
  check_square(params.wv, d, "W_v");
  const Tensor q = matmul(query_src, params.wq);
  const Tensor k = matmul(kv_src, params.wk);
  const Tensor v = matmul(kv_src, params.wv);
  const double logit_scale = scaled ? 1.0 / std::sqrt(static_cast<double>(d)) : 1.0;
  return attention(q, k, v, 1, logit_scale, key_mask);
}

Tensor mhsa(const Tensor& tokens, const AttentionConfig& config, const MhsaParams& params) {
  config.validate();
  if (tokens.rank() != 2 || tokens.dim(1) != config.model_dim) {
    throw ShapeError("mhsa tokens " + shape_string(tokens.shape()) + " for width " +
                     std::to_string(config.model_dim));
  }
  const int d = config.model_dim;
  check_square(params.wq, d, "W_q");
  check_square(params.wk, d, "W_k");
  check_square(params.wv, d, "W_v");
  check_square(params.wo, d, "W_o");
  const Tensor q = matmul(tokens, params.wq);
  const Tensor k = matmul(tokens, params.wk);
  const Tensor v = matmul(tokens, params.wv);
  const double logit_scale = config.scaled ? 1.0 / std::sqrt(static_cast<double>(config.head_dim())) : 1.0;
  const Tensor heads = attention(q, k, v, config.heads, logit_scale);
  return add(tokens, linear(heads, params.wo, params.bo));
}

}  // namespace cross360::nn
