#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "cross360/error.hpp"
#include "cross360/geometry.hpp"
#include "cross360/layout.hpp"

namespace cross360 {
namespace {

TEST(ErpPixel, CenterOfTinyGrid) {
  const LatLon p = erp_pixel_to_latlon(1, 2, 2, 4);
  EXPECT_DOUBLE_EQ(p.lat, -kPi / 4);
  EXPECT_DOUBLE_EQ(p.lon, kPi / 4);
}

TEST(ErpPixel, FirstPixelOfDegreeGrid) {
  const LatLon p = erp_pixel_to_latlon(0, 0, 180, 360);
  EXPECT_DOUBLE_EQ(p.lat, kPi / 2 - kPi * 0.5 / 180);
  EXPECT_DOUBLE_EQ(p.lon, -kPi + 2 * kPi * 0.5 / 360);
}

TEST(ErpPixel, OutOfRangeIsIndexError) {
  EXPECT_THROW(erp_pixel_to_latlon(2, 0, 2, 4), IndexError);
  EXPECT_THROW(erp_pixel_to_latlon(0, -1, 2, 4), IndexError);
  EXPECT_THROW(erp_pixel_to_latlon(0, 4, 2, 4), IndexError);
}

TEST(ErpPixel, ExhaustiveRoundTrip16x32) {
  for (int r = 0; r < 16; ++r) {
    for (int c = 0; c < 32; ++c) {
      const PixelCoord px = latlon_to_erp_pixel(erp_pixel_to_latlon(r, c, 16, 32), 16, 32);
      EXPECT_NEAR(px.row, r, 1e-12);
      EXPECT_NEAR(px.col, c, 1e-12);
    }
  }
}

TEST(ErpPixel, GridCenterAndPole) {
  const PixelCoord mid = latlon_to_erp_pixel(LatLon::make(0, 0), 64, 128);
  EXPECT_DOUBLE_EQ(mid.row, 31.5);
  EXPECT_DOUBLE_EQ(mid.col, 63.5);
  for (double lon : {-3.0, 0.0, 1.0, 2.5}) {
    EXPECT_DOUBLE_EQ(latlon_to_erp_pixel(LatLon::make(kPi / 2, lon), 64, 128).row, -0.5);
  }
}

TEST(ErpPixel, RandomRoundTripSeveralSizes) {
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> lat(-kPi / 2, kPi / 2), lon(-kPi, kPi);
  for (auto [h, w] : {std::pair{4, 8}, {64, 128}, {180, 360}, {33, 66}}) {
    for (int i = 0; i < 500; ++i) {
      const LatLon p = LatLon::make(lat(rng), lon(rng));
      const PixelCoord px = latlon_to_erp_pixel(p, h, w);
      const LatLon q = erp_pixel_to_latlon(px.row, px.col, h, w);
      const PixelCoord px2 = latlon_to_erp_pixel(q, h, w);
      EXPECT_NEAR(px2.row, px.row, 1e-12);
      EXPECT_NEAR(px2.col, px.col, 1e-12);
    }
  }
}

TEST(Longitude, NormalizedToHalfOpenInterval) {
  EXPECT_DOUBLE_EQ(normalize_lon(kPi), -kPi);
  EXPECT_DOUBLE_EQ(normalize_lon(-kPi), -kPi);
  EXPECT_NEAR(normalize_lon(3 * kPi + 0.25), -kPi + 0.25, 1e-12);
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> u(-50, 50);
  for (int i = 0; i < 10000; ++i) {
    const double l = normalize_lon(u(rng));
    EXPECT_GE(l, -kPi);
    EXPECT_LT(l, kPi);
  }
}

TEST(LatLonType, RejectsBadLatitude) {
  EXPECT_THROW(LatLon::make(2.0, 0.0), ValidationError);
  EXPECT_THROW(LatLon::make(NAN, 0.0), ValidationError);
}

TEST(Gnomonic, TangentPointMapsToOrigin) {
  std::mt19937_64 rng(1);
  std::uniform_real_distribution<double> lat(-kPi / 2, kPi / 2), lon(-kPi, kPi);
  for (int i = 0; i < 1000; ++i) {
    const LatLon c = LatLon::make(lat(rng), lon(rng));
    const auto t = gnomonic_forward(c, c);
    ASSERT_TRUE(t);
    EXPECT_EQ(t->x, 0.0);
    EXPECT_EQ(t->y, 0.0);
  }
}

TEST(Gnomonic, AlongMeridian) {
  const auto t = gnomonic_forward(LatLon::from_degrees(36, 0), LatLon::make(0, 0));
  ASSERT_TRUE(t);
  EXPECT_NEAR(t->x, 0.0, 1e-15);
  EXPECT_NEAR(t->y, std::tan(deg2rad(36)), 1e-14);
  EXPECT_NEAR(t->y, 0.72654, 1e-5);
  const LatLon back = gnomonic_inverse({0.0, std::tan(deg2rad(36))}, LatLon::make(0, 0));
  EXPECT_NEAR(back.lat, deg2rad(36), 1e-14);
  EXPECT_NEAR(back.lon, 0.0, 1e-14);
}

TEST(Gnomonic, AntipodeAndHorizonRejected) {
  const LatLon c = LatLon::from_degrees(20, 40);
  EXPECT_FALSE(gnomonic_forward(LatLon::from_degrees(-20, -140), c));
  // exactly 90 degrees away along the equator
  EXPECT_FALSE(gnomonic_forward(LatLon::from_degrees(0, 90), LatLon::make(0, 0)));
}

TEST(Gnomonic, InverseOfOriginIsCenter) {
  const LatLon c = LatLon::from_degrees(-63, 171);
  const LatLon p = gnomonic_inverse({0, 0}, c);
  EXPECT_EQ(p.lat, c.lat);
  EXPECT_EQ(p.lon, c.lon);
}

// property: inverse(forward(p)) == p within 80 degrees of the center
TEST(Gnomonic, RoundTripWithin80Degrees) {
  std::mt19937_64 rng(11);
  std::uniform_real_distribution<double> lat(-kPi / 2, kPi / 2), lon(-kPi, kPi), u(0, 1);
  double worst = 0.0;
  for (int i = 0; i < 20000; ++i) {
    const LatLon c = LatLon::make(lat(rng), lon(rng));
    // random direction and distance from the center via the inverse of a random tangent point
    const double dist = deg2rad(80) * std::sqrt(u(rng));
    const double az = 2 * kPi * u(rng);
    const double rho = std::tan(dist);
    const LatLon p = gnomonic_inverse({rho * std::cos(az), rho * std::sin(az)}, c);
    const auto t = gnomonic_forward(p, c);
    ASSERT_TRUE(t);
    worst = std::max(worst, angular_distance(gnomonic_inverse(*t, c), p));
    EXPECT_NEAR(angular_distance(p, c), dist, 1e-9);
  }
  EXPECT_LT(worst, 1e-9);
}

TEST(PatchPixels, OddResolutionCenterPixelIsCenter) {
  TangentPlaneSpec spec{LatLon::from_degrees(36, -120), deg2rad(72), 25};
  const LatLon p = patch_pixel_to_latlon(12, 12, spec);
  EXPECT_LT(angular_distance(p, spec.center), 1e-14);
}

TEST(PatchPixels, CornerDistanceClosedForm) {
  for (int res : {4, 8, 16, 24}) {
    TangentPlaneSpec spec{LatLon::from_degrees(-36, 60), deg2rad(72), res};
    const double expect = std::atan(std::sqrt(2.0) * std::tan(deg2rad(36)) * (res - 1) / res);
    for (auto [r, c] : {std::pair{0, 0}, {0, res - 1}, {res - 1, 0}, {res - 1, res - 1}}) {
      EXPECT_NEAR(angular_distance(patch_pixel_to_latlon(r, c, spec), spec.center), expect, 1e-12);
    }
  }
}

TEST(PatchPixels, Full26StaysInsideHemisphere) {
  const Layout layout = build_layout(layout_preset("full-26"), 24);
  for (const auto& spec : layout) {
    for (int r = 0; r < spec.resolution; ++r) {
      for (int c = 0; c < spec.resolution; ++c) {
        const LatLon p = patch_pixel_to_latlon(r, c, spec);
        EXPECT_TRUE(gnomonic_forward(p, spec.center).has_value());
        EXPECT_LT(angular_distance(p, spec.center), kPi / 2);
      }
    }
  }
}

TEST(PatchPixels, TangentPixelRoundTrip) {
  TangentPlaneSpec spec{LatLon::make(0.3, 1.0), deg2rad(72), 16};
  for (double r : {0.0, 3.25, 15.0}) {
    for (double c : {0.0, 7.5, 15.0}) {
      const PixelCoord px = tangent_to_patch_pixel(patch_pixel_to_tangent(r, c, spec), spec);
      EXPECT_NEAR(px.row, r, 1e-12);
      EXPECT_NEAR(px.col, c, 1e-12);
    }
  }
}

}  // namespace
}  // namespace cross360
