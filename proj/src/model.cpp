#include "cross360/model.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "cross360/error.hpp"
#include "cross360/ops.hpp"

namespace cross360 {

using nn::Tensor;

namespace {

constexpr int kImageChannels = 3;
// softplus(1.8546) ~= 2 m, a room-scale starting depth
constexpr double kHeadBiasInit = 1.8546;

std::string scale_prefix(int s) { return "s" + std::to_string(s) + "."; }

int acs_bottleneck(int c) { return std::max(1, c / 4); }

}  // namespace

void ModelConfig::validate() const {
  if (scales < 2) throw ConfigError("model needs at least 2 scales, got " + std::to_string(scales));
  if (channels.size() != static_cast<std::size_t>(scales)) {
    throw ConfigError("channels has " + std::to_string(channels.size()) + " entries for " +
                      std::to_string(scales) + " scales");
  }
  if (patch_resolutions.size() != static_cast<std::size_t>(scales - 1)) {
    throw ConfigError("patch_resolutions needs " + std::to_string(scales - 1) + " entries (one per CPFA scale), got " +
                      std::to_string(patch_resolutions.size()));
  }
  if (heads <= 0) throw ConfigError("heads must be positive");
  for (int c : channels) {
    if (c <= 0) throw ConfigError("channel widths must be positive");
  }
  for (int s = 1; s < scales; ++s) {
    if (channels_at(s) % heads != 0) {
      throw ConfigError("channels[" + std::to_string(s - 1) + "] = " + std::to_string(channels_at(s)) +
                        " is not divisible by " + std::to_string(heads) + " heads");
    }
  }
  for (int r : patch_resolutions) {
    if (r <= 0) throw ConfigError("patch resolutions must be positive");
  }
  if (height <= 0 || width != 2 * height) {
    throw ConfigError("input must satisfy W = 2H, got " + std::to_string(height) + "x" + std::to_string(width));
  }
  if (height % (1 << (scales - 1)) != 0) {
    throw ConfigError("input height " + std::to_string(height) + " not divisible by 2^" + std::to_string(scales - 1));
  }
  if (!std::isfinite(lon_offset)) throw ConfigError("lon_offset must be finite");
  layout_config().validate();
}

LayoutConfig ModelConfig::layout_config() const {
  LayoutConfig lc = layout_preset(layout);
  lc.lon_offset += lon_offset;
  return lc;
}

Grid to_grid(const Tensor& t) {
  if (t.rank() != 3) throw ShapeError("expected a [c, h, w] tensor, got " + nn::shape_string(t.shape()));
  Grid g(t.dim(0), t.dim(1), t.dim(2));
  std::copy(t.value().begin(), t.value().end(), g.data.begin());
  return g;
}

Tensor from_grid(const Grid& g, bool requires_grad) {
  g.check();
  return Tensor::from({g.channels, g.height, g.width}, g.data, requires_grad);
}

// ---- stages ----

Tensor conv_block(const Tensor& x, const ConvBlockParams& p) {
  return nn::silu(nn::switchable_norm(nn::conv3x3(x, p.kernel, p.bias), p.norm));
}

std::vector<Tensor> encoder_stub(const Tensor& image, const ModelConfig& config,
                                 const std::vector<ConvBlockParams>& blocks) {
  const int S = config.scales;
  if (image.rank() != 3 || image.dim(0) != kImageChannels || image.dim(1) != config.height ||
      image.dim(2) != config.width) {
    throw ConfigError("image " + nn::shape_string(image.shape()) + " does not match configured [3, " +
                      std::to_string(config.height) + ", " + std::to_string(config.width) + "]");
  }
  if (blocks.size() != static_cast<std::size_t>(S)) throw ConfigError("encoder needs one block per scale");
  std::vector<Tensor> erp(S);
  erp[S - 1] = conv_block(image, blocks[S - 1]);
  for (int s = S - 1; s >= 1; --s) {
    erp[s - 1] = nn::downsample2x(conv_block(erp[s], blocks[s - 1]));
  }
  return erp;
}

CpfaOperators make_cpfa_operators(const Layout& layout, int query_height, int query_width, int erp_height,
                                  int erp_width, const Mask* query_mask) {
  if (layout.empty()) throw ConfigError("CPFA layout is empty");
  CpfaOperators ops;
  ops.patches = static_cast<int>(layout.size());
  ops.resolution = layout.front().resolution;
  auto to_tangent = std::make_shared<LinearResampler>(
      bake(erp_to_tangent_plan(query_height, query_width, layout), query_mask));
  ops.to_erp = std::make_shared<LinearResampler>(
      bake(tangent_to_erp_plan(layout, erp_height, erp_width), &to_tangent->output_mask));
  ops.to_tangent = std::move(to_tangent);
  return ops;
}

Tensor cpfa_stage(const Tensor& query_source, const Tensor& erp_feat, const CpfaOperators& ops,
                  const CpfaParams& params, const nn::AttentionConfig& attention, const Mask* key_mask,
                  ForwardTrace* trace, int scale) {
  if (query_source.rank() != 3 || erp_feat.rank() != 3) {
    throw ConfigError("cpfa_stage expects [c, h, w] inputs");
  }
  const int d = erp_feat.dim(0);
  const int h = erp_feat.dim(1);
  const int w = erp_feat.dim(2);
  if (attention.model_dim != d) {
    throw ConfigError("CPFA width " + std::to_string(attention.model_dim) + " does not match ERP features " +
                      nn::shape_string(erp_feat.shape()));
  }
  if (ops.to_erp->output_pixels != h * w ||
      ops.to_tangent->input_pixels != query_source.dim(1) * query_source.dim(2)) {
    throw ConfigError("CPFA operators were built for another scale than " + nn::shape_string(erp_feat.shape()));
  }
  const int tokens = ops.patches * ops.resolution * ops.resolution;

  // (1) query source -> tangent patches, one token per patch pixel
  Tensor patches = nn::resample(query_source, ops.to_tangent, {tokens});
  Tensor t = nn::linear(nn::transpose(patches), params.embed_w, params.embed_b);
  // (2) self-attention over every patch token jointly
  t = nn::mhsa(t, attention, params.mhsa);
  // (3) normalize both streams
  t = nn::transpose(nn::switchable_norm(nn::transpose(t), params.norm_tp));
  Tensor kv = nn::transpose(nn::reshape(nn::switchable_norm(erp_feat, params.norm_erp), {d, h * w}));
  // (4) patch tokens query the whole ERP feature map
  Tensor aligned = nn::cross_attention(t, kv, params.cross, attention.scaled, key_mask);
  // (5) back to ERP layout
  Tensor out = nn::resample(nn::transpose(aligned), ops.to_erp, {h, w});

  if (trace) {
    ++trace->cpfa_calls;
    trace->cpfa_scales.push_back(scale);
    trace->query_tokens.push_back(tokens);
    int keys = h * w;
    if (key_mask) keys = static_cast<int>(std::count_if(key_mask->begin(), key_mask->end(), [](auto m) { return m != 0; }));
    trace->key_tokens.push_back(keys);
    trace->erp_to_tangent_scales.push_back(scale);
  }
  return out;
}

Tensor decoder_stage(const Tensor& aligned, const Tensor& skip_erp, const ConvBlockParams& p) {
  if (aligned.rank() != 3 || skip_erp.rank() != 3 || aligned.dim(1) != skip_erp.dim(1) ||
      aligned.dim(2) != skip_erp.dim(2)) {
    throw ShapeError("decoder_stage inputs " + nn::shape_string(aligned.shape()) + " and " +
                     nn::shape_string(skip_erp.shape()) + " differ in spatial size");
  }
  return conv_block(nn::concat_channels({aligned, skip_erp}), p);
}

Tensor finest_stage(const Tensor& prev_decoded, const Tensor& finest_erp, const ConvBlockParams& p) {
  if (prev_decoded.rank() != 3 || finest_erp.rank() != 3 || 2 * prev_decoded.dim(1) != finest_erp.dim(1) ||
      2 * prev_decoded.dim(2) != finest_erp.dim(2)) {
    throw ShapeError("finest_stage: " + nn::shape_string(prev_decoded.shape()) + " does not upsample to " +
                     nn::shape_string(finest_erp.shape()));
  }
  return decoder_stage(nn::upsample2x(prev_decoded), finest_erp, p);
}

Tensor acs_block(const Tensor& x, const AcsParams& p) {
  const int c = x.dim(0);
  Tensor pooled = nn::reshape(nn::global_avg_pool(x), {1, c});
  Tensor hidden = nn::silu(nn::linear(pooled, p.w1, p.b1));
  Tensor weights = nn::sigmoid(nn::linear(hidden, p.w2, p.b2));
  return nn::broadcast_channels(nn::reshape(weights, {c}), x.dim(1), x.dim(2));
}

Tensor pfaa(const std::vector<Tensor>& decoded, const PfaaParams& params, const AttentionMapFn& attention_map,
            std::vector<Tensor>* all) {
  const std::size_t S = decoded.size();
  if (S == 0 || params.acs.size() != S || params.project.size() != S) {
    throw ValidationError("pfaa needs one decoded map, attention block and projection per scale (got " +
                          std::to_string(S) + " maps)");
  }
  auto map = [&](int s, const Tensor& u) {
    return attention_map ? attention_map(s, u) : acs_block(u, params.acs[static_cast<std::size_t>(s - 1)]);
  };
  Tensor acs = nn::mul(map(1, decoded[0]), decoded[0]);
  if (all) all->assign(1, acs);
  for (std::size_t s = 2; s <= S; ++s) {
    const Tensor lifted = nn::conv1x1(nn::upsample2x(acs), params.project[s - 1]);
    const Tensor u = nn::add(decoded[s - 1], lifted);
    acs = nn::mul(map(static_cast<int>(s), u), u);
    if (all) all->push_back(acs);
  }
  return acs;
}

std::vector<Tensor> depth_heads(const std::vector<Tensor>& decoded, const Tensor& aggregated_final,
                                const std::vector<HeadParams>& heads) {
  const std::size_t S = decoded.size();
  if (heads.size() != S) throw ValidationError("depth_heads needs one head per scale");
  std::vector<Tensor> depths;
  for (std::size_t s = 0; s < S; ++s) {
    const Tensor& src = s + 1 == S ? aggregated_final : decoded[s];
    depths.push_back(nn::softplus(nn::conv3x3(src, heads[s].kernel, heads[s].bias)));
  }
  return depths;
}

// ---- model ----

Model::Model(ModelConfig config) : config_(std::move(config)), store_(config_.seed) {
  config_.validate();
  build_parameters();
  build_operators();
}

nn::SwitchNormParams Model::norm_params(const std::string& prefix) const {
  return {store_.get(prefix + "mean_logits"), store_.get(prefix + "var_logits"), store_.get(prefix + "gamma"),
          store_.get(prefix + "beta")};
}

ConvBlockParams Model::conv_params(const std::string& prefix) const {
  return {store_.get(prefix + "conv.w"), store_.get(prefix + "conv.b"), norm_params(prefix + "norm.")};
}

void Model::build_parameters() {
  const int S = config_.scales;
  auto add_norm = [&](const std::string& prefix, int c) {
    store_.add_constant(prefix + "mean_logits", {3}, 0.0);
    store_.add_constant(prefix + "var_logits", {3}, 0.0);
    store_.add_constant(prefix + "gamma", {c}, 1.0);
    store_.add_constant(prefix + "beta", {c}, 0.0);
  };
  auto add_conv = [&](const std::string& prefix, int cin, int cout) {
    store_.add_uniform(prefix + "conv.w", {cout, cin, 3, 3}, cin * 9);
    store_.add_constant(prefix + "conv.b", {cout}, 0.0);
    add_norm(prefix + "norm.", cout);
  };

  for (int s = 1; s <= S; ++s) {
    const int cin = s == S ? kImageChannels : config_.channels_at(s + 1);
    add_conv(scale_prefix(s) + "enc.", cin, config_.channels_at(s));
  }
  for (int s = 1; s < S; ++s) {
    const std::string p = scale_prefix(s) + "cpfa.";
    const int d = config_.channels_at(s);
    const int cq = s == 1 ? kImageChannels : config_.channels_at(s - 1);
    store_.add_uniform(p + "embed.w", {cq, d}, cq);
    store_.add_constant(p + "embed.b", {d}, 0.0);
    for (const char* m : {"mhsa.wq", "mhsa.wk", "mhsa.wv", "mhsa.wo"}) store_.add_uniform(p + m, {d, d}, d);
    store_.add_constant(p + "mhsa.bo", {d}, 0.0);
    add_norm(p + "norm_tp.", d);
    add_norm(p + "norm_erp.", d);
    for (const char* m : {"cross.wq", "cross.wk", "cross.wv"}) store_.add_uniform(p + m, {d, d}, d);
  }
  for (int s = 1; s <= S; ++s) {
    const int c = config_.channels_at(s);
    const int cin = s == S ? config_.channels_at(S - 1) + c : 2 * c;
    add_conv(scale_prefix(s) + "dec.", cin, c);
  }
  for (int s = 1; s <= S; ++s) {
    const std::string p = scale_prefix(s) + "acs.";
    const int c = config_.channels_at(s);
    const int r = acs_bottleneck(c);
    store_.add_uniform(p + "w1", {c, r}, c);
    store_.add_constant(p + "b1", {r}, 0.0);
    store_.add_uniform(p + "w2", {r, c}, r);
    store_.add_constant(p + "b2", {c}, 0.0);
    if (s >= 2) store_.add_uniform(scale_prefix(s) + "pfaa.project", {c, config_.channels_at(s - 1)}, config_.channels_at(s - 1));
  }
  for (int s = 1; s <= S; ++s) {
    const int c = config_.channels_at(s);
    store_.add_uniform(scale_prefix(s) + "head.w", {1, c, 3, 3}, c * 9, 0.1);
    store_.add_constant(scale_prefix(s) + "head.b", {1}, kHeadBiasInit);
  }

  for (int s = 1; s <= S; ++s) encoder_.push_back(conv_params(scale_prefix(s) + "enc."));
  for (int s = 1; s < S; ++s) {
    const std::string p = scale_prefix(s) + "cpfa.";
    CpfaParams c;
    c.embed_w = store_.get(p + "embed.w");
    c.embed_b = store_.get(p + "embed.b");
    c.mhsa = {store_.get(p + "mhsa.wq"), store_.get(p + "mhsa.wk"), store_.get(p + "mhsa.wv"),
              store_.get(p + "mhsa.wo"), store_.get(p + "mhsa.bo")};
    c.norm_tp = norm_params(p + "norm_tp.");
    c.norm_erp = norm_params(p + "norm_erp.");
    c.cross = {store_.get(p + "cross.wq"), store_.get(p + "cross.wk"), store_.get(p + "cross.wv")};
    cpfa_.push_back(std::move(c));
  }
  for (int s = 1; s <= S; ++s) decoder_.push_back(conv_params(scale_prefix(s) + "dec."));
  for (int s = 1; s <= S; ++s) {
    const std::string p = scale_prefix(s) + "acs.";
    pfaa_.acs.push_back({store_.get(p + "w1"), store_.get(p + "b1"), store_.get(p + "w2"), store_.get(p + "b2")});
    pfaa_.project.push_back(s >= 2 ? store_.get(scale_prefix(s) + "pfaa.project") : Tensor{});
    heads_.push_back({store_.get(scale_prefix(s) + "head.w"), store_.get(scale_prefix(s) + "head.b")});
  }
}

void Model::build_operators() {
  const LayoutConfig lc = config_.layout_config();
  for (int s = 1; s < config_.scales; ++s) {
    layouts_.push_back(build_layout(lc, config_.patch_resolutions[static_cast<std::size_t>(s - 1)]));
    const int qh = s == 1 ? config_.height : config_.scale_height(s);
    const int qw = s == 1 ? config_.width : config_.scale_width(s);
    operators_.push_back(
        make_cpfa_operators(layouts_.back(), qh, qw, config_.scale_height(s), config_.scale_width(s)));
  }
}

StageFeatures Model::forward(const Grid& image) const {
  const Tensor t = from_grid(image);
  return forward(t, image.mask ? &*image.mask : nullptr);
}

StageFeatures Model::forward(const Tensor& image, const Mask* mask) const {
  const int S = config_.scales;
  StageFeatures f;
  f.erp = encoder_stub(image, config_, encoder_);

  // per-scale key masks, finest first then halved by majority vote
  std::vector<Mask> key_masks;
  if (mask) {
    if (mask->size() != static_cast<std::size_t>(config_.height) * config_.width) {
      throw ShapeError("image mask does not match the image size");
    }
    key_masks.assign(static_cast<std::size_t>(S), Mask{});
    key_masks[S - 1] = *mask;
    for (int s = S - 1; s >= 1; --s) {
      key_masks[s - 1] = downsample_mask_majority(key_masks[s], config_.scale_height(s + 1), config_.scale_width(s + 1));
    }
  }

  for (int s = 1; s < S; ++s) {
    const auto si = static_cast<std::size_t>(s - 1);
    Tensor query;
    if (s == 1) {
      query = image;
    } else {
      const Tensor& prev = config_.query_source == QuerySource::Aligned ? f.aligned[si - 1] : f.decoded[si - 1];
      query = nn::upsample2x(prev);
    }
    CpfaOperators masked_ops;
    const CpfaOperators* ops = &operators_[si];
    if (mask && s == 1) {
      masked_ops = make_cpfa_operators(layouts_[si], config_.height, config_.width, config_.scale_height(s),
                                       config_.scale_width(s), mask);
      ops = &masked_ops;
    }
    nn::AttentionConfig attention{config_.heads, config_.channels_at(s), config_.attention_scaling};
    f.aligned.push_back(cpfa_stage(query, f.erp[si], *ops, cpfa_[si], attention,
                                   mask ? &key_masks[si] : nullptr, &f.trace, s));
    f.decoded.push_back(decoder_stage(f.aligned.back(), f.erp[si], decoder_[si]));
  }
  f.decoded.push_back(finest_stage(f.decoded.back(), f.erp[S - 1], decoder_[S - 1]));
  const Tensor final_acs = pfaa(f.decoded, pfaa_, {}, &f.aggregated);
  f.depths = depth_heads(f.decoded, final_acs, heads_);
  return f;
}

// ---- cost model ----

FlopEstimate estimate_flops(const ModelConfig& config) {
  config.validate();
  const int S = config.scales;
  FlopEstimate e;
  auto conv = [&](int h, int w, int cin, int cout) { e.conv += 9.0 * h * w * cin * cout; };
  auto linear = [&](double n, double din, double dout) { e.linear += n * din * dout; };

  for (int s = S; s >= 1; --s) {
    const int cin = s == S ? kImageChannels : config.channels_at(s + 1);
    const int h = s == S ? config.height : config.scale_height(s + 1);
    const int w = s == S ? config.width : config.scale_width(s + 1);
    conv(h, w, cin, config.channels_at(s));
  }
  const LayoutConfig lc = config.layout_config();
  for (int s = 1; s < S; ++s) {
    const int d = config.channels_at(s);
    const int cq = s == 1 ? kImageChannels : config.channels_at(s - 1);
    const int res = config.patch_resolutions[static_cast<std::size_t>(s - 1)];
    const double tokens = static_cast<double>(lc.patch_count()) * res * res;
    const double keys = static_cast<double>(config.scale_height(s)) * config.scale_width(s);
    // bilinear gathers: 4 taps per patch pixel, 4 taps per (pixel, patch) overlap
    const Layout layout = build_layout(lc, res);
    const auto back = tangent_to_erp_plan(layout, config.scale_height(s), config.scale_width(s));
    e.resample += 4.0 * tokens * cq + 4.0 * static_cast<double>(back.contributions.size()) * d;
    linear(tokens, cq, d);
    linear(tokens, d, 3.0 * d);     // mhsa q, k, v
    e.attention += 2.0 * tokens * tokens * d;
    linear(tokens, d, d);           // mhsa output
    linear(tokens, d, d);           // cross q
    linear(keys, d, 2.0 * d);       // cross k, v
    e.attention += 2.0 * tokens * keys * d;
    conv(config.scale_height(s), config.scale_width(s), 2 * d, d);
  }
  conv(config.height, config.width, config.channels_at(S - 1) + config.channels_at(S), config.channels_at(S));
  for (int s = 1; s <= S; ++s) {
    const int c = config.channels_at(s);
    const int r = acs_bottleneck(c);
    linear(1, c, r);
    linear(1, r, c);
    if (s >= 2) linear(static_cast<double>(config.scale_height(s)) * config.scale_width(s), config.channels_at(s - 1), c);
    conv(config.scale_height(s), config.scale_width(s), c, 1);
  }
  return e;
}

std::size_t parameter_count(const ModelConfig& config) {
  return Model(config).params().scalar_count();
}

}  // namespace cross360
