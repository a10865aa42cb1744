#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "../common/oracles.hpp"
#include "cross360/error.hpp"
#include "cross360/model.hpp"
#include "cross360/toy.hpp"

namespace cross360 {
namespace {

using nn::Shape;
using nn::Tensor;

Tensor rand_tensor(std::mt19937_64& rng, Shape shape, double lo = -1, double hi = 1) {
  std::uniform_real_distribution<double> u(lo, hi);
  std::vector<double> v(nn::shape_numel(shape));
  for (auto& x : v) x = u(rng);
  return Tensor::from(std::move(shape), std::move(v));
}

std::vector<double> vec_of(const Tensor& t) { return {t.value().begin(), t.value().end()}; }

oracle::Map map_of(const Tensor& t) {
  oracle::Map m(t.dim(0), t.dim(1), t.dim(2));
  m.v.assign(t.value().begin(), t.value().end());
  return m;
}

ModelConfig small_config() {
  ModelConfig c;
  c.channels = {4, 4, 4, 4, 4};
  c.heads = 2;
  c.patch_resolutions = {2, 2, 3, 3};
  c.height = 16;
  c.width = 32;
  c.seed = 7;
  return c;
}

Grid random_image(int h, int w, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0, 1);
  Grid g(3, h, w);
  for (auto& v : g.data) v = u(rng);
  return g;
}

TEST(Config, Validation) {
  ModelConfig c = small_config();
  c.width = 30;
  EXPECT_THROW(c.validate(), ConfigError);
  c = small_config();
  c.patch_resolutions.pop_back();
  EXPECT_THROW(c.validate(), ConfigError);
  c = small_config();
  c.height = 12;
  c.width = 24;
  EXPECT_THROW(c.validate(), ConfigError);
  c = small_config();
  c.layout = "nope";
  EXPECT_THROW(c.validate(), ConfigError);
  EXPECT_NO_THROW(ModelConfig{}.validate());
}

TEST(Forward, ShapeLadderAndTrace) {
  const Model m(small_config());
  const StageFeatures f = m.forward(random_image(16, 32, 1));
  ASSERT_EQ(f.erp.size(), 5u);
  ASSERT_EQ(f.aligned.size(), 4u);
  ASSERT_EQ(f.decoded.size(), 5u);
  ASSERT_EQ(f.aggregated.size(), 5u);
  ASSERT_EQ(f.depths.size(), 5u);
  for (int s = 1; s <= 5; ++s) {
    const int h = 16 >> (5 - s), w = 32 >> (5 - s);
    auto i = static_cast<std::size_t>(s - 1);
    EXPECT_EQ(f.erp[i].shape(), (Shape{4, h, w}));
    EXPECT_EQ(f.decoded[i].shape(), (Shape{4, h, w}));
    EXPECT_EQ(f.aggregated[i].shape(), (Shape{4, h, w}));
    EXPECT_EQ(f.depths[i].shape(), (Shape{1, h, w}));
    if (s < 5) EXPECT_EQ(f.aligned[i].shape(), (Shape{4, h, w}));
    for (double d : f.depths[i].value()) EXPECT_GT(d, 0.0);
  }
  EXPECT_EQ(f.trace.cpfa_calls, 4);
  EXPECT_EQ(f.trace.cpfa_scales, (std::vector<int>{1, 2, 3, 4}));
  EXPECT_EQ(f.trace.erp_to_tangent_scales, (std::vector<int>{1, 2, 3, 4}));
  EXPECT_EQ(f.trace.query_tokens, (std::vector<int>{26 * 4, 26 * 4, 26 * 9, 26 * 9}));
  EXPECT_EQ(f.trace.key_tokens, (std::vector<int>{1 * 2, 2 * 4, 4 * 8, 8 * 16}));
}

TEST(Forward, TokenCountAtResolution8) {
  ModelConfig c = small_config();
  c.patch_resolutions = {2, 8, 3, 3};
  const Model m(c);
  EXPECT_EQ(m.forward(random_image(16, 32, 2)).trace.query_tokens[1], 1664);
}

TEST(Forward, DoublingInputDoublesStages) {
  ModelConfig c = small_config();
  c.height = 32;
  c.width = 64;
  const StageFeatures f = Model(c).forward(random_image(32, 64, 3));
  for (int s = 1; s <= 5; ++s) EXPECT_EQ(f.depths[s - 1].dim(1), 32 >> (5 - s));
}

TEST(Forward, ImageSizeMismatch) {
  const Model m(small_config());
  EXPECT_THROW(m.forward(random_image(8, 16, 1)), ValidationError);
}

TEST(Forward, DeterministicForSeed) {
  const Grid img = random_image(16, 32, 4);
  const auto a = vec_of(Model(small_config()).forward(img).depths.back());
  const auto b = vec_of(Model(small_config()).forward(img).depths.back());
  EXPECT_EQ(a, b);
  ModelConfig other = small_config();
  other.seed = 8;
  EXPECT_NE(a, vec_of(Model(other).forward(img).depths.back()));
}

TEST(Forward, QuerySourceSwitchChangesOutput) {
  const Grid img = random_image(16, 32, 5);
  ModelConfig c = small_config();
  const auto a = vec_of(Model(c).forward(img).depths.back());
  c.query_source = QuerySource::Aligned;
  EXPECT_NE(a, vec_of(Model(c).forward(img).depths.back()));
}

TEST(Forward, MaskedInputRestrictsKeys) {
  Grid img = random_image(16, 32, 6);
  img.mask = Mask(img.pixels(), 1);
  for (int r = 0; r < 4; ++r)
    for (int c = 0; c < 32; ++c) (*img.mask)[r * 32 + c] = 0;
  ModelConfig c = small_config();
  c.layout = "clipped-20";
  const StageFeatures f = Model(c).forward(img);
  // finest key grid 8x16 loses its top two rows
  EXPECT_EQ(f.trace.key_tokens.back(), 6 * 16);
  EXPECT_EQ(f.trace.query_tokens.front(), 20 * 4);
}

// rotating the input by W/2 and the layout by pi rotates the output by W/2
TEST(Forward, LongitudeShiftConsistency) {
  ModelConfig c = small_config();
  const Grid img = random_image(16, 32, 9);
  Grid rolled(3, 16, 32);
  for (int ch = 0; ch < 3; ++ch)
    for (int r = 0; r < 16; ++r)
      for (int col = 0; col < 32; ++col) rolled.at(ch, r, (col + 16) % 32) = img.at(ch, r, col);
  const auto a = Model(c).forward(img).depths.back();
  c.lon_offset = kPi;
  const auto b = Model(c).forward(rolled).depths.back();
  for (int r = 0; r < 16; ++r)
    for (int col = 0; col < 32; ++col)
      EXPECT_NEAR(b.value()[r * 32 + (col + 16) % 32], a.value()[r * 32 + col], 1e-4);
}

TEST(Stages, CpfaConstantValueThroughIdentity) {
  std::mt19937_64 rng(10);
  const int d = 4, h = 8, w = 16;
  const Layout layout = build_layout(layout_preset("full-26"), 3);
  const CpfaOperators ops = make_cpfa_operators(layout, h, w, h, w);
  std::vector<double> eye(d * d, 0.0);
  for (int i = 0; i < d; ++i) eye[i * d + i] = 1;
  const Tensor id = Tensor::from({d, d}, eye);
  const std::vector<double> v = {0.3, -1.2, 2.0, 0.7};
  nn::SwitchNormParams erp_norm{Tensor::zeros({3}), Tensor::zeros({3}), Tensor::full({d}, 1.0), Tensor::from({d}, v)};
  nn::SwitchNormParams tp_norm{Tensor::zeros({3}), Tensor::zeros({3}), Tensor::full({d}, 1.0), Tensor::zeros({d})};
  CpfaParams p{rand_tensor(rng, {d, d}), rand_tensor(rng, {d}),
               {rand_tensor(rng, {d, d}), rand_tensor(rng, {d, d}), rand_tensor(rng, {d, d}), rand_tensor(rng, {d, d}),
                rand_tensor(rng, {d})},
               tp_norm, erp_norm,
               {rand_tensor(rng, {d, d}), rand_tensor(rng, {d, d}), id}};
  const Tensor out = cpfa_stage(rand_tensor(rng, {d, h, w}), Tensor::full({d, h, w}, 5.0), ops, p, {2, d, true});
  ASSERT_EQ(out.shape(), (Shape{d, h, w}));
  int covered = 0;
  for (int px = 0; px < h * w; ++px) {
    if (!ops.to_erp->output_mask[px]) continue;
    ++covered;
    for (int ch = 0; ch < d; ++ch) EXPECT_NEAR(out.value()[ch * h * w + px], v[ch], 1e-9);
  }
  EXPECT_EQ(covered, h * w);
}

TEST(Stages, DecoderOutputChannelsAndZeroInput) {
  std::mt19937_64 rng(11);
  ConvBlockParams p{rand_tensor(rng, {5, 6, 3, 3}), Tensor::zeros({5}),
                    {Tensor::zeros({3}), Tensor::zeros({3}), Tensor::full({5}, 1.0), Tensor::from({5}, {0, 1, 2, 3, 4})}};
  const Tensor out = decoder_stage(Tensor::zeros({3, 4, 8}), Tensor::zeros({3, 4, 8}), p);
  EXPECT_EQ(out.shape(), (Shape{5, 4, 8}));
  for (int ch = 0; ch < 5; ++ch) {
    const double shift = ch;
    const double expect = shift / (1.0 + std::exp(-shift));
    for (int i = 0; i < 32; ++i) EXPECT_NEAR(out.value()[ch * 32 + i], expect, 1e-12);
  }
  EXPECT_THROW(decoder_stage(Tensor::zeros({3, 4, 8}), Tensor::zeros({3, 2, 4}), p), ShapeError);
  const Tensor fin = finest_stage(Tensor::zeros({3, 2, 4}), Tensor::zeros({3, 4, 8}), p);
  EXPECT_EQ(fin.shape(), (Shape{5, 4, 8}));
}

AcsParams acs_params(std::mt19937_64& rng, int c) {
  const int r = std::max(1, c / 4);
  return {rand_tensor(rng, {c, r}), rand_tensor(rng, {r}), rand_tensor(rng, {r, c}), rand_tensor(rng, {c})};
}

TEST(Acs, RangeAndSpatialConstancy) {
  std::mt19937_64 rng(12);
  const Tensor x = rand_tensor(rng, {8, 4, 6}, -3, 3);
  const AcsParams p = acs_params(rng, 8);
  const Tensor a = acs_block(x, p);
  const auto ref = oracle::acs(map_of(x), vec_of(p.w1), vec_of(p.b1), vec_of(p.w2), vec_of(p.b2), 2);
  for (std::size_t i = 0; i < ref.v.size(); ++i) EXPECT_NEAR(a.value()[i], ref.v[i], 1e-14);
  for (int ch = 0; ch < 8; ++ch)
    for (int i = 0; i < 24; ++i) {
      EXPECT_GT(a.value()[ch * 24 + i], 0.0);
      EXPECT_LT(a.value()[ch * 24 + i], 1.0);
      EXPECT_EQ(a.value()[ch * 24 + i], a.value()[ch * 24]);
    }
  AcsParams zero_bias = p;
  zero_bias.b2 = Tensor::zeros({8});
  zero_bias.b1 = Tensor::zeros({2});
  for (double v : vec_of(acs_block(Tensor::zeros({8, 2, 2}), zero_bias))) EXPECT_EQ(v, 0.5);
}

struct PfaaCase {
  std::vector<Tensor> decoded;
  PfaaParams params;
};

PfaaCase pfaa_case(std::mt19937_64& rng, std::vector<int> channels, int h0, int w0) {
  PfaaCase c;
  for (std::size_t s = 0; s < channels.size(); ++s) {
    c.decoded.push_back(rand_tensor(rng, {channels[s], h0 << s, w0 << s}));
    c.params.acs.push_back(acs_params(rng, channels[s]));
    c.params.project.push_back(s == 0 ? Tensor() : rand_tensor(rng, {channels[s], channels[s - 1]}));
  }
  return c;
}

TEST(Pfaa, MatchesRecursionOracle) {
  std::mt19937_64 rng(13);
  for (int t = 0; t < 20; ++t) {
    const PfaaCase c = pfaa_case(rng, {3 + t % 3, 4, 2 + t % 4}, 1 + t % 2, 2 + t % 3);
    const auto attn = [&](int s, const oracle::Map& u) {
      const auto& a = c.params.acs[s - 1];
      return oracle::acs(u, vec_of(a.w1), vec_of(a.b1), vec_of(a.w2), vec_of(a.b2), a.b1.dim(0));
    };
    const auto ref = oracle::pfaa3(map_of(c.decoded[0]), map_of(c.decoded[1]), map_of(c.decoded[2]),
                                   vec_of(c.params.project[1]), vec_of(c.params.project[2]), attn);
    const Tensor out = pfaa(c.decoded, c.params);
    ASSERT_EQ(out.numel(), ref.v.size());
    for (std::size_t i = 0; i < ref.v.size(); ++i) EXPECT_NEAR(out.value()[i], ref.v[i], 1e-10);
  }
}

TEST(Pfaa, ForcedOnesIsPlainSum) {
  std::mt19937_64 rng(14);
  PfaaCase c = pfaa_case(rng, {3, 3}, 2, 4);
  c.params.project[1] = Tensor::from({3, 3}, {1, 0, 0, 0, 1, 0, 0, 0, 1});
  const auto ones = [](int, const Tensor& u) { return Tensor::full(u.shape(), 1.0); };
  const Tensor out = pfaa(c.decoded, c.params, ones);
  const Tensor expect = nn::add(c.decoded[1], nn::upsample2x(c.decoded[0]));
  for (std::size_t i = 0; i < out.numel(); ++i) EXPECT_NEAR(out.value()[i], expect.value()[i], 1e-15);
}

TEST(Pfaa, ForcedZerosAnnihilate) {
  std::mt19937_64 rng(15);
  const PfaaCase c = pfaa_case(rng, {4, 3, 2}, 1, 2);
  const auto zeros = [](int, const Tensor& u) { return Tensor::zeros(u.shape()); };
  for (double v : vec_of(pfaa(c.decoded, c.params, zeros))) EXPECT_EQ(v, 0.0);
}

TEST(Pfaa, WrongListLength) {
  std::mt19937_64 rng(16);
  PfaaCase c = pfaa_case(rng, {2, 2, 2}, 1, 2);
  c.decoded.pop_back();
  EXPECT_THROW(pfaa(c.decoded, c.params), ValidationError);
}

TEST(Heads, PositiveAndLadder) {
  std::mt19937_64 rng(17);
  std::vector<Tensor> decoded;
  std::vector<HeadParams> heads;
  for (int s = 0; s < 3; ++s) {
    decoded.push_back(rand_tensor(rng, {2, 2 << s, 4 << s}, -20, 20));
    heads.push_back({rand_tensor(rng, {1, 2, 3, 3}, -5, 5), Tensor::from({1}, {-30.0})});
  }
  const auto d = depth_heads(decoded, decoded.back(), heads);
  ASSERT_EQ(d.size(), 3u);
  for (int s = 0; s < 3; ++s) {
    EXPECT_EQ(d[s].shape(), (Shape{1, 2 << s, 4 << s}));
    for (double v : vec_of(d[s])) EXPECT_GT(v, 0.0);
  }
}

TEST(Flops, AblationOrderingAndScaling) {
  std::vector<double> macs;
  for (const char* name : {"ablation-10", "ablation-18", "ablation-26", "ablation-46"}) {
    ModelConfig c;
    c.layout = name;
    macs.push_back(estimate_flops(c).total());
  }
  for (std::size_t i = 1; i < macs.size(); ++i) EXPECT_LT(macs[i - 1], macs[i]);

  ModelConfig base;
  ModelConfig wide = base;
  for (auto& ch : wide.channels) ch *= 2;
  // every conv quadruples except the RGB stem and the depth heads, which only double
  double doubling = 9.0 * base.height * base.width * 3 * base.channels.back();
  for (int s = 1; s <= base.scales; ++s) doubling += 9.0 * base.scale_height(s) * base.scale_width(s) * base.channels_at(s);
  EXPECT_DOUBLE_EQ(estimate_flops(wide).conv, 4 * estimate_flops(base).conv - 2 * doubling);
  EXPECT_GT(parameter_count(wide), parameter_count(base));
  EXPECT_EQ(parameter_count(base), Model(base).params().scalar_count());
}

TEST(Flops, LinearMacsAreExact) {
  // one CPFA scale, everything else minimal: linear MACs = sum of n * d_in * d_out
  ModelConfig c;
  c.scales = 2;
  c.channels = {4, 2};
  c.patch_resolutions = {2};
  c.heads = 1;
  c.height = 8;
  c.width = 16;
  const double n_tp = 26 * 4, n_erp = 4 * 8, d = 4;
  // embed (3 -> d), mhsa q k v o, cross q over tokens, cross k v over ERP keys, acs mlps, fine projection
  const double expect = n_tp * 3 * d + 4 * n_tp * d * d + n_tp * d * d + 2 * n_erp * d * d + (4 * 1 + 1 * 4) +
                        (2 * 1 + 1 * 2) + 8 * 16 * 4 * 2;
  EXPECT_DOUBLE_EQ(estimate_flops(c).linear, expect);
}

TEST(Toy, SceneIsAnalytic) {
  const ToyScene s = make_toy_scene(64, 128);
  ASSERT_EQ(s.image.channels, 3);
  ASSERT_EQ(s.depth.channels, 1);
  for (double v : s.image.data) {
    EXPECT_GE(v, 0.0);
    EXPECT_LE(v, 1.0);
  }
  // nearest wall is 1.5 m below, farthest corner is sqrt(3.3^2+2.6^2+1.5^2)
  for (double d : s.depth.data) {
    EXPECT_GE(d, 1.2 - 1e-12);
    EXPECT_LE(d, std::sqrt(3.3 * 3.3 + 2.6 * 2.6 + 1.5 * 1.5) + 1e-12);
  }
}

TEST(Toy, ZeroIterationsEchoesInitialLoss) {
  Model m(small_config());
  const ToyScene s = make_toy_scene(16, 32);
  TrainOptions o;
  o.iterations = 0;
  const ToyTrainReport r = train_toy(m, s.image, s.depth, o);
  EXPECT_TRUE(r.series.empty());
  EXPECT_EQ(r.initial_loss, r.final_loss);
  EXPECT_EQ(r.seed, 7u);
}

TEST(Toy, ShortRunDescends) {
  Model m(small_config());
  const ToyScene s = make_toy_scene(16, 32);
  TrainOptions o;
  o.iterations = 5;
  const ToyTrainReport r = train_toy(m, s.image, s.depth, o);
  ASSERT_EQ(r.series.size(), 5u);
  EXPECT_LT(r.final_loss, r.initial_loss);
  for (const auto& l : r.series) EXPECT_NEAR(l.total, l.mse + l.grad, 1e-12);
}

TEST(Toy, BerhuModeRuns) {
  Model m(small_config());
  const ToyScene s = make_toy_scene(16, 32);
  TrainOptions o;
  o.iterations = 2;
  o.loss.pixel = PixelLoss::Berhu;
  const ToyTrainReport r = train_toy(m, s.image, s.depth, o);
  ASSERT_TRUE(r.series[0].berhu);
  EXPECT_NEAR(r.series[0].total, *r.series[0].berhu + r.series[0].grad, 1e-12);
}

TEST(Toy, DivergenceNamesIteration) {
  Model m(small_config());
  const ToyScene s = make_toy_scene(16, 32);
  TrainOptions o;
  o.iterations = 3;
  Grid bad = s.image;
  bad.data[5] = NAN;
  try {
    train_toy(m, bad, s.depth, o);
    FAIL() << "expected divergence";
  } catch (const NumericError& e) {
    EXPECT_NE(std::string(e.what()).find("iteration"), std::string::npos);
  }
}

}  // namespace
}  // namespace cross360
