#pragma once

// Desk-scale depth network: conv encoder pyramid, per-scale cross-projection
// alignment (tangent patches attending to ERP features), decoder with skip
// links, progressive channel-attention aggregation and per-scale depth heads.
// Scale 1 is the coarsest, scale S the full input resolution.

#include <cstdint>
#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "cross360/grid.hpp"
#include "cross360/layers.hpp"
#include "cross360/layout.hpp"
#include "cross360/params.hpp"
#include "cross360/resampler.hpp"

namespace cross360 {

enum class QuerySource {
  Decoded,  // upsampled F^D of the previous scale
  Aligned,  // upsampled F^CA of the previous scale
};

struct ModelConfig {
  int scales = 5;
  std::vector<int> channels{64, 64, 48, 32, 16};  // coarsest first
  std::string layout = "full-26";
  std::vector<int> patch_resolutions{4, 8, 16, 24};  // CPFA scales 1..S-1
  int heads = 4;
  int height = 64;
  int width = 128;
  std::uint64_t seed = 0;
  bool attention_scaling = true;
  QuerySource query_source = QuerySource::Decoded;
  /// Extra longitude rotation added to the preset's own offset (radians).
  double lon_offset = 0.0;

  void validate() const;
  int scale_height(int s) const { return height >> (scales - s); }
  int scale_width(int s) const { return width >> (scales - s); }
  int channels_at(int s) const { return channels.at(static_cast<std::size_t>(s - 1)); }
  LayoutConfig layout_config() const;
};

struct FlopEstimate {
  double conv = 0.0;
  double linear = 0.0;
  double attention = 0.0;
  double resample = 0.0;
  double total() const { return conv + linear + attention + resample; }
};

/// Multiply-accumulate count of one forward pass.
FlopEstimate estimate_flops(const ModelConfig& config);
std::size_t parameter_count(const ModelConfig& config);

struct ForwardTrace {
  int cpfa_calls = 0;
  std::vector<int> cpfa_scales;
  std::vector<int> query_tokens;
  std::vector<int> key_tokens;
  std::vector<int> erp_to_tangent_scales;
};

/// Per-scale tensors, index 0 = scale 1. aligned has S-1 entries.
struct StageFeatures {
  std::vector<nn::Tensor> erp;
  std::vector<nn::Tensor> aligned;
  std::vector<nn::Tensor> decoded;
  std::vector<nn::Tensor> aggregated;
  std::vector<nn::Tensor> depths;
  ForwardTrace trace;
};

Grid to_grid(const nn::Tensor& t);
nn::Tensor from_grid(const Grid& g, bool requires_grad = false);

// ---- stage building blocks ----

struct ConvBlockParams {
  nn::Tensor kernel;  // [c_out, c_in, 3, 3]
  nn::Tensor bias;    // [c_out]
  nn::SwitchNormParams norm;
};

/// silu(switchable_norm(conv3x3(x)))
nn::Tensor conv_block(const nn::Tensor& x, const ConvBlockParams& p);

/// blocks[S-1] maps the image to F^ERP_S; blocks[s-1] (s < S) maps F^ERP_{s+1}
/// to F^ERP_s before the 2x downsampling. Result index s-1 holds scale s.
std::vector<nn::Tensor> encoder_stub(const nn::Tensor& image, const ModelConfig& config,
                                     const std::vector<ConvBlockParams>& blocks);

struct CpfaParams {
  nn::Tensor embed_w;  // [c_query, d]
  nn::Tensor embed_b;  // [d]
  nn::MhsaParams mhsa;
  nn::SwitchNormParams norm_tp;
  nn::SwitchNormParams norm_erp;
  nn::CrossAttentionParams cross;
};

struct CpfaOperators {
  std::shared_ptr<const LinearResampler> to_tangent;  // query source -> patches
  std::shared_ptr<const LinearResampler> to_erp;      // patches -> erp_feat grid
  int patches = 0;
  int resolution = 0;
};

/// Builds both operators. query_mask (if any) restricts the query source.
CpfaOperators make_cpfa_operators(const Layout& layout, int query_height, int query_width,
                                  int erp_height, int erp_width, const Mask* query_mask = nullptr);

nn::Tensor cpfa_stage(const nn::Tensor& query_source, const nn::Tensor& erp_feat,
                      const CpfaOperators& ops, const CpfaParams& params,
                      const nn::AttentionConfig& attention, const Mask* key_mask = nullptr,
                      ForwardTrace* trace = nullptr, int scale = 0);

nn::Tensor decoder_stage(const nn::Tensor& aligned, const nn::Tensor& skip_erp,
                         const ConvBlockParams& p);
nn::Tensor finest_stage(const nn::Tensor& prev_decoded, const nn::Tensor& finest_erp,
                        const ConvBlockParams& p);

struct AcsParams {
  nn::Tensor w1, b1;  // [c, r], [r]
  nn::Tensor w2, b2;  // [r, c], [c]
};

/// Channel attention map in (0, 1), broadcast to x's shape.
nn::Tensor acs_block(const nn::Tensor& x, const AcsParams& p);

struct PfaaParams {
  std::vector<AcsParams> acs;        // one per scale
  std::vector<nn::Tensor> project;   // [c_s, c_{s-1}] for s >= 2; index 0 unused
};

/// Attention-map generator for scale s (1-based) given u. Replaces acs_block in tests.
using AttentionMapFn = std::function<nn::Tensor(int scale, const nn::Tensor& u)>;

/// Returns F^ACS_S; all per-scale F^ACS_s go to `all` when given.
nn::Tensor pfaa(const std::vector<nn::Tensor>& decoded, const PfaaParams& params,
                const AttentionMapFn& attention_map = {}, std::vector<nn::Tensor>* all = nullptr);

struct HeadParams {
  nn::Tensor kernel;  // [1, c, 3, 3]
  nn::Tensor bias;    // [1]
};

std::vector<nn::Tensor> depth_heads(const std::vector<nn::Tensor>& decoded,
                                    const nn::Tensor& aggregated_final,
                                    const std::vector<HeadParams>& heads);

// ---- full model ----

class Model {
 public:
  explicit Model(ModelConfig config);

  const ModelConfig& config() const { return config_; }
  nn::ParameterStore& params() { return store_; }
  const nn::ParameterStore& params() const { return store_; }

  /// image is [3, H, W]; its mask, if any, limits scale-1 queries and all keys.
  StageFeatures forward(const Grid& image) const;
  StageFeatures forward(const nn::Tensor& image, const Mask* mask = nullptr) const;

  const Layout& cpfa_layout(int scale) const { return layouts_.at(static_cast<std::size_t>(scale - 1)); }

 private:
  ConvBlockParams conv_params(const std::string& prefix) const;
  nn::SwitchNormParams norm_params(const std::string& prefix) const;
  void build_parameters();
  void build_operators();

  ModelConfig config_;
  nn::ParameterStore store_;
  std::vector<ConvBlockParams> encoder_;
  std::vector<CpfaParams> cpfa_;
  std::vector<ConvBlockParams> decoder_;  // S entries; last is the finest stage
  PfaaParams pfaa_;
  std::vector<HeadParams> heads_;
  std::vector<Layout> layouts_;
  std::vector<CpfaOperators> operators_;
};

}  // namespace cross360
