#include "cross360/geometry.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "cross360/error.hpp"

namespace cross360 {

double normalize_lon(double lon) {
  constexpr double two_pi = 2.0 * kPi;
  if (lon >= -kPi && lon < kPi) return lon;
  double wrapped = lon - two_pi * std::floor((lon + kPi) / two_pi);
  // floor can land exactly on +pi through rounding
  if (wrapped >= kPi) wrapped -= two_pi;
  if (wrapped < -kPi) wrapped = -kPi;
  return wrapped;
}

LatLon LatLon::make(double lat, double lon) {
  if (!std::isfinite(lat) || !std::isfinite(lon)) {
    throw ValidationError("non-finite LatLon");
  }
  if (lat < -kPi / 2 || lat > kPi / 2) {
    throw ValidationError("latitude out of range: " + std::to_string(lat));
  }
  return LatLon{lat, normalize_lon(lon)};
}

double TangentPlaneSpec::half_extent() const { return std::tan(fov / 2.0); }

double angular_distance(const LatLon& a, const LatLon& b) {
  // haversine form stays accurate for small separations
  const double dlat = b.lat - a.lat;
  const double dlon = b.lon - a.lon;
  const double s = std::sin(dlat / 2) * std::sin(dlat / 2) +
                   std::cos(a.lat) * std::cos(b.lat) * std::sin(dlon / 2) * std::sin(dlon / 2);
  return 2.0 * std::asin(std::min(1.0, std::sqrt(s)));
}

LatLon erp_pixel_to_latlon(int row, int col, int height, int width) {
  if (height <= 0 || width <= 0) throw IndexError("empty ERP grid");
  if (row < 0 || row >= height || col < 0 || col >= width) {
    throw IndexError("pixel (" + std::to_string(row) + ", " + std::to_string(col) +
                     ") outside " + std::to_string(height) + "x" + std::to_string(width));
  }
  return erp_pixel_to_latlon(static_cast<double>(row), static_cast<double>(col), height, width);
}

LatLon erp_pixel_to_latlon(double row, double col, int height, int width) {
  const double lon = 2.0 * kPi * (col + 0.5) / width - kPi;
  const double lat = kPi / 2 - kPi * (row + 0.5) / height;
  return LatLon{lat, normalize_lon(lon)};
}

PixelCoord latlon_to_erp_pixel(const LatLon& p, int height, int width) {
  return PixelCoord{(kPi / 2 - p.lat) * height / kPi - 0.5,
                    (p.lon + kPi) * width / (2.0 * kPi) - 0.5};
}

std::optional<TangentXY> gnomonic_forward(const LatLon& p, const LatLon& center) {
  const double sin_lat = std::sin(p.lat);
  const double cos_lat = std::cos(p.lat);
  const double sin_lat0 = std::sin(center.lat);
  const double cos_lat0 = std::cos(center.lat);
  const double dlon = p.lon - center.lon;
  const double cos_dlon = std::cos(dlon);
  const double cos_c = sin_lat0 * sin_lat + cos_lat0 * cos_lat * cos_dlon;
  if (cos_c <= kHemisphereEpsilon) return std::nullopt;
  return TangentXY{cos_lat * std::sin(dlon) / cos_c,
                   (cos_lat0 * sin_lat - sin_lat0 * cos_lat * cos_dlon) / cos_c};
}

LatLon gnomonic_inverse(const TangentXY& t, const LatLon& center) {
  const double rho = std::hypot(t.x, t.y);
  if (rho == 0.0) return center;
  const double c = std::atan(rho);
  const double sin_c = std::sin(c);
  const double cos_c = std::cos(c);
  const double sin_lat0 = std::sin(center.lat);
  const double cos_lat0 = std::cos(center.lat);
  const double s = cos_c * sin_lat0 + t.y * sin_c * cos_lat0 / rho;
  const double lat = std::asin(std::clamp(s, -1.0, 1.0));
  const double lon =
      center.lon + std::atan2(t.x * sin_c, rho * cos_lat0 * cos_c - t.y * sin_lat0 * sin_c);
  return LatLon{lat, normalize_lon(lon)};
}

TangentXY patch_pixel_to_tangent(double row, double col, const TangentPlaneSpec& spec) {
  const double extent = spec.half_extent();
  const double res = spec.resolution;
  return TangentXY{(2.0 * (col + 0.5) / res - 1.0) * extent,
                   (1.0 - 2.0 * (row + 0.5) / res) * extent};
}

PixelCoord tangent_to_patch_pixel(const TangentXY& t, const TangentPlaneSpec& spec) {
  const double extent = spec.half_extent();
  const double res = spec.resolution;
  return PixelCoord{(1.0 - t.y / extent) * res / 2.0 - 0.5, (t.x / extent + 1.0) * res / 2.0 - 0.5};
}

LatLon patch_pixel_to_latlon(int row, int col, const TangentPlaneSpec& spec) {
  return gnomonic_inverse(patch_pixel_to_tangent(row, col, spec), spec.center);
}

}  // namespace cross360
