#pragma once

// Coordinate mathematics between equirectangular pixels, the unit sphere and
// gnomonic tangent planes. All functions are pure.

#include <numbers>
#include <optional>

namespace cross360 {

inline constexpr double kPi = std::numbers::pi;

/// Below this value of cos(angular distance) a point is treated as lying
/// outside the hemisphere around the tangent point.
inline constexpr double kHemisphereEpsilon = 1e-6;

constexpr double deg2rad(double deg) { return deg * kPi / 180.0; }
constexpr double rad2deg(double rad) { return rad * 180.0 / kPi; }

/// Wraps a longitude into [-pi, pi).
double normalize_lon(double lon);

/// A point on the unit sphere. lat in [-pi/2, pi/2], lon in [-pi, pi).
struct LatLon {
  double lat = 0.0;
  double lon = 0.0;

  /// Builds a LatLon, normalizing lon and rejecting out-of-range latitudes.
  static LatLon make(double lat, double lon);
  static LatLon from_degrees(double lat_deg, double lon_deg) {
    return make(deg2rad(lat_deg), deg2rad(lon_deg));
  }
};

struct TangentXY {
  double x = 0.0;
  double y = 0.0;
};

struct PixelCoord {
  double row = 0.0;
  double col = 0.0;
};

struct TangentPlaneSpec {
  LatLon center;
  double fov = deg2rad(72.0);  // full angular width of the square patch
  int resolution = 24;

  /// Half-extent of the patch on the tangent plane, tan(fov / 2).
  double half_extent() const;
};

/// Great-circle angle between two points.
double angular_distance(const LatLon& a, const LatLon& b);

/// Pixel-center convention: pixel (row, col) is sampled at (row + 0.5, col + 0.5).
/// Throws IndexError when the indices fall outside the grid.
LatLon erp_pixel_to_latlon(int row, int col, int height, int width);
LatLon erp_pixel_to_latlon(double row, double col, int height, int width);

/// Fractional pixel coordinates; integer values hit pixel centers.
PixelCoord latlon_to_erp_pixel(const LatLon& p, int height, int width);

/// Gnomonic projection onto the plane tangent at `center`. Returns nullopt
/// when p lies on or beyond the horizon (cos c <= kHemisphereEpsilon).
std::optional<TangentXY> gnomonic_forward(const LatLon& p, const LatLon& center);

LatLon gnomonic_inverse(const TangentXY& t, const LatLon& center);

/// Tangent-plane coordinates of a patch pixel center. Rows run from +y (north)
/// to -y, columns from -x to +x.
TangentXY patch_pixel_to_tangent(double row, double col, const TangentPlaneSpec& spec);

/// Inverse of patch_pixel_to_tangent, giving fractional patch pixel coordinates.
PixelCoord tangent_to_patch_pixel(const TangentXY& t, const TangentPlaneSpec& spec);

LatLon patch_pixel_to_latlon(int row, int col, const TangentPlaneSpec& spec);

}  // namespace cross360
