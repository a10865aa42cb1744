#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "cross360/geometry.hpp"
#include "cross360/layout.hpp"
#include "cross360/resampler.hpp"

namespace cross360 {
namespace {

Grid random_grid(std::mt19937_64& rng, int c, int h, int w) {
  std::uniform_real_distribution<double> u(-1, 1);
  Grid g(c, h, w);
  for (auto& v : g.data) v = u(rng);
  return g;
}

Grid field(int h, int w, double (*f)(double, double)) {
  Grid g(1, h, w);
  for (int r = 0; r < h; ++r)
    for (int c = 0; c < w; ++c) {
      const LatLon p = erp_pixel_to_latlon(r, c, h, w);
      g.at(0, r, c) = f(p.lat, p.lon);
    }
  return g;
}

double smooth(double lat, double lon) { return std::cos(lat) * std::cos(lon) + 0.5 * std::sin(lat); }

TEST(Bilinear, IntegerPositionsHitPixels) {
  std::mt19937_64 rng(2);
  const Grid g = random_grid(rng, 2, 5, 7);
  for (int r = 0; r < 5; ++r)
    for (int c = 0; c < 7; ++c) {
      const auto v = bilinear_sample(g, r, c, true);
      EXPECT_EQ(v[0], g.at(0, r, c));
      EXPECT_EQ(v[1], g.at(1, r, c));
    }
}

// edge coordinate W - 0.5 + 0.25 is center coordinate W - 0.75
TEST(Bilinear, SeamBlendsLastAndFirstColumn) {
  Grid g(1, 2, 8);
  for (int c = 0; c < 8; ++c) g.at(0, 0, c) = g.at(0, 1, c) = c;
  const double col = 8 - 0.5 + 0.25 - 0.5;
  EXPECT_NEAR(bilinear_sample(g, 0, col, true)[0], 0.75 * 7 + 0.25 * 0, 1e-15);
  EXPECT_NEAR(bilinear_sample(g, 0, -0.5, true)[0], 0.5 * 7 + 0.5 * 0, 1e-15);
  EXPECT_NEAR(bilinear_sample(g, 0, 7.25, false)[0], 7.0, 1e-15);
}

TEST(Bilinear, RowsClampAtPoles) {
  std::mt19937_64 rng(4);
  const Grid g = random_grid(rng, 1, 4, 6);
  EXPECT_EQ(bilinear_sample(g, -0.4, 2, true)[0], g.at(0, 0, 2));
  EXPECT_EQ(bilinear_sample(g, 3.4, 2, true)[0], g.at(0, 3, 2));
}

// dense oracle: area-weighted lookup of the 4 neighbours written from scratch
TEST(Bilinear, MatchesDirectOracle) {
  std::mt19937_64 rng(6);
  std::uniform_real_distribution<double> ur(-1, 6), uc(-3, 12);
  for (int t = 0; t < 20; ++t) {
    const Grid g = random_grid(rng, 1, 6, 9);
    for (int i = 0; i < 50; ++i) {
      const double row = ur(rng), col = uc(rng);
      const double rr = std::clamp(row, 0.0, 5.0);
      double expect = 0;
      for (int dr = 0; dr < 6; ++dr)
        for (int dc = -9; dc < 18; ++dc) {
          const double wr = std::max(0.0, 1 - std::abs(rr - dr));
          const double wc = std::max(0.0, 1 - std::abs(col - dc));
          expect += wr * wc * g.at(0, dr, ((dc % 9) + 9) % 9);
        }
      EXPECT_NEAR(bilinear_sample(g, row, col, true)[0], expect, 1e-12);
    }
  }
}

TEST(ErpToTangent, ConstantImage) {
  Grid g(3, 32, 64, 0.0);
  for (int c = 0; c < 3; ++c) std::fill(g.plane(c).begin(), g.plane(c).end(), 0.25 * (c + 1));
  const PatchSet set = erp_to_tangent(g, build_layout(layout_preset("full-26"), 8));
  ASSERT_EQ(set.grids.size(), 26u);
  for (const auto& p : set.grids)
    for (int c = 0; c < 3; ++c)
      for (double v : p.plane(c)) EXPECT_NEAR(v, 0.25 * (c + 1), 1e-15);
}

TEST(ErpToTangent, LongitudeFieldAwayFromSeam) {
  const int h = 256, w = 512;
  const Grid g = field(h, w, [](double, double lon) { return lon; });
  Layout layout = {TangentPlaneSpec{LatLon::from_degrees(10, 30), deg2rad(60), 16}};
  const PatchSet set = erp_to_tangent(g, layout);
  for (int r = 0; r < 16; ++r)
    for (int c = 0; c < 16; ++c) {
      const LatLon p = patch_pixel_to_latlon(r, c, layout[0]);
      EXPECT_NEAR(set.grids[0].at(0, r, c), p.lon, 1e-3);
    }
}

TEST(ErpToTangent, CenterPixelMatchesSample) {
  std::mt19937_64 rng(8);
  const Grid g = random_grid(rng, 1, 32, 64);
  const TangentPlaneSpec spec{LatLon::from_degrees(-20, 100), deg2rad(72), 9};
  const PatchSet set = erp_to_tangent(g, {spec});
  const PixelCoord px = latlon_to_erp_pixel(spec.center, 32, 64);
  EXPECT_NEAR(set.grids[0].at(0, 4, 4), bilinear_sample(g, px.row, px.col, true)[0], 1e-12);
}

TEST(ErpToTangent, IndependentOfPatchOrder) {
  std::mt19937_64 rng(9);
  const Grid g = random_grid(rng, 2, 16, 32);
  Layout layout = build_layout(layout_preset("full-26"), 4);
  Layout reversed(layout.rbegin(), layout.rend());
  const PatchSet a = erp_to_tangent(g, layout), b = erp_to_tangent(g, reversed);
  for (std::size_t i = 0; i < layout.size(); ++i) EXPECT_EQ(a.grids[i].data, b.grids[layout.size() - 1 - i].data);
}

TEST(ErpToTangent, MaskPropagates) {
  Grid g(1, 32, 64, 1.0);
  g.mask = Mask(g.pixels(), 1);
  for (int r = 0; r < 8; ++r)
    for (int c = 0; c < 64; ++c) (*g.mask)[r * 64 + c] = 0;  // northern cap missing
  const PatchSet set = erp_to_tangent(g, build_layout(layout_preset("full-26"), 8));
  // the northern row reaches into the missing cap
  ASSERT_TRUE(set.grids[25].mask);
  EXPECT_LT(set.grids[25].valid_count(), set.grids[25].pixels());
  EXPECT_GT(set.grids[25].valid_count(), 0u);
  ASSERT_TRUE(set.grids[11].mask);  // equator patch untouched
  EXPECT_EQ(set.grids[11].valid_count(), set.grids[11].pixels());
}

TEST(TangentToErp, ConstantPatchesAndFullCoverage) {
  const Layout layout = build_layout(layout_preset("full-26"), 24);
  PatchSet set{layout, {}};
  for (std::size_t i = 0; i < layout.size(); ++i) set.grids.emplace_back(1, 24, 24, -2.5);
  const Grid out = tangent_to_erp(set, 64, 128);
  ASSERT_TRUE(out.mask);
  EXPECT_EQ(out.valid_count(), out.pixels());
  for (double v : out.data) EXPECT_NEAR(v, -2.5, 1e-14);
}

TEST(TangentToErp, UncoveredPixelsAreZeroAndMasked) {
  const Layout layout = build_layout(layout_preset("clipped-20"), 8);
  PatchSet set{layout, {}};
  for (std::size_t i = 0; i < layout.size(); ++i) set.grids.emplace_back(1, 8, 8, 4.0);
  const Grid out = tangent_to_erp(set, 32, 64);
  EXPECT_LT(out.valid_count(), out.pixels());
  for (std::size_t p = 0; p < out.pixels(); ++p) EXPECT_NEAR(out.data[p], out.valid(p) ? 4.0 : 0.0, 1e-12);
}

TEST(TangentToErp, ConvexCombination) {
  std::mt19937_64 rng(12);
  const Layout layout = build_layout(layout_preset("full-26"), 8);
  PatchSet set{layout, {}};
  double lo = 1e9, hi = -1e9;
  for (std::size_t i = 0; i < layout.size(); ++i) {
    set.grids.push_back(random_grid(rng, 1, 8, 8));
    for (double v : set.grids.back().data) lo = std::min(lo, v), hi = std::max(hi, v);
  }
  const Grid out = tangent_to_erp(set, 32, 64);
  for (double v : out.data) {
    EXPECT_GE(v, lo - 1e-12);
    EXPECT_LE(v, hi + 1e-12);
  }
}

TEST(TangentToErp, PermutationInvariant) {
  std::mt19937_64 rng(13);
  const Layout layout = build_layout(layout_preset("full-26"), 8);
  PatchSet a{layout, {}}, b;
  for (std::size_t i = 0; i < layout.size(); ++i) a.grids.push_back(random_grid(rng, 1, 8, 8));
  std::vector<std::size_t> perm(layout.size());
  std::iota(perm.begin(), perm.end(), 0);
  std::shuffle(perm.begin(), perm.end(), rng);
  for (auto i : perm) {
    b.specs.push_back(a.specs[i]);
    b.grids.push_back(a.grids[i]);
  }
  const Grid oa = tangent_to_erp(a, 32, 64), ob = tangent_to_erp(b, 32, 64);
  for (std::size_t p = 0; p < oa.data.size(); ++p) EXPECT_NEAR(oa.data[p], ob.data[p], 1e-14);
}

// rotating the layout by k columns rotates the stitched output by k columns
TEST(TangentToErp, LongitudeRotationEquivariance) {
  const int h = 32, w = 64, k = 5;
  std::mt19937_64 rng(14);
  LayoutConfig cfg = layout_preset("full-26");
  const Layout base = build_layout(cfg, 8);
  cfg.lon_offset += 2 * kPi * k / w;
  const Layout rotated = build_layout(cfg, 8);
  PatchSet a{base, {}}, b{rotated, {}};
  for (std::size_t i = 0; i < base.size(); ++i) a.grids.push_back(random_grid(rng, 1, 8, 8));
  b.grids = a.grids;
  const Grid oa = tangent_to_erp(a, h, w), ob = tangent_to_erp(b, h, w);
  for (int r = 0; r < h; ++r)
    for (int c = 0; c < w; ++c) EXPECT_NEAR(ob.at(0, r, (c + k) % w), oa.at(0, r, c), 1e-6);
}

TEST(RoundTrip, ConstantExactAndSmoothBounded) {
  const Layout layout = build_layout(layout_preset("full-26"), 24);
  Grid constant(1, 64, 128, 0.7);
  const Grid back = tangent_to_erp(erp_to_tangent(constant, layout), 64, 128);
  for (std::size_t p = 0; p < back.pixels(); ++p)
    if (back.valid(p)) EXPECT_NEAR(back.data[p], 0.7, 1e-14);

  const Grid f = field(64, 128, smooth);
  const Grid g = tangent_to_erp(erp_to_tangent(f, layout), 64, 128);
  const auto [mn, mx] = std::minmax_element(f.data.begin(), f.data.end());
  double se = 0;
  std::size_t n = 0;
  for (std::size_t p = 0; p < g.pixels(); ++p) {
    if (!g.valid(p)) continue;
    se += (g.data[p] - f.data[p]) * (g.data[p] - f.data[p]);
    ++n;
  }
  EXPECT_EQ(n, g.pixels());
  EXPECT_LT(std::sqrt(se / n), 0.02 * (*mx - *mn));
}

TEST(LinearOperator, TransposeIsAdjoint) {
  std::mt19937_64 rng(15);
  const Layout layout = build_layout(layout_preset("full-26"), 4);
  const LinearResampler op = bake(tangent_to_erp_plan(layout, 16, 32));
  std::uniform_real_distribution<double> u(-1, 1);
  std::vector<double> x(op.input_pixels), y(op.output_pixels), ax(op.output_pixels), aty(op.input_pixels, 0.0);
  for (auto& v : x) v = u(rng);
  for (auto& v : y) v = u(rng);
  op.apply(x, ax, 1);
  op.apply_transpose(y, aty, 1);
  double lhs = 0, rhs = 0;
  for (std::size_t i = 0; i < y.size(); ++i) lhs += ax[i] * y[i];
  for (std::size_t i = 0; i < x.size(); ++i) rhs += x[i] * aty[i];
  EXPECT_NEAR(lhs, rhs, 1e-12);
}

TEST(LinearOperator, Deterministic) {
  std::mt19937_64 rng(16);
  const Grid g = random_grid(rng, 4, 32, 64);
  const Layout layout = build_layout(layout_preset("full-26"), 8);
  const Grid a = tangent_to_erp(erp_to_tangent(g, layout), 32, 64);
  const Grid b = tangent_to_erp(erp_to_tangent(g, layout), 32, 64);
  EXPECT_EQ(a.data, b.data);
}

}  // namespace
}  // namespace cross360
