#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <vector>

namespace cross360 {

using Mask = std::vector<std::uint8_t>;

/// Dense channel-major image or feature map with an optional per-pixel
/// validity mask (nonzero = valid).
struct Grid {
  int channels = 0;
  int height = 0;
  int width = 0;
  std::vector<double> data;
  std::optional<Mask> mask;

  Grid() = default;
  Grid(int channels, int height, int width, double fill = 0.0);

  std::size_t pixels() const { return static_cast<std::size_t>(height) * width; }
  bool empty() const { return data.empty(); }

  double& at(int c, int row, int col) {
    return data[(static_cast<std::size_t>(c) * height + row) * width + col];
  }
  double at(int c, int row, int col) const {
    return data[(static_cast<std::size_t>(c) * height + row) * width + col];
  }
  std::span<double> plane(int c) {
    return {data.data() + static_cast<std::size_t>(c) * pixels(), pixels()};
  }
  std::span<const double> plane(int c) const {
    return {data.data() + static_cast<std::size_t>(c) * pixels(), pixels()};
  }
  bool valid(std::size_t pixel) const { return !mask || (*mask)[pixel] != 0; }
  bool valid(int row, int col) const {
    return valid(static_cast<std::size_t>(row) * width + col);
  }
  std::size_t valid_count() const;

  /// Throws ShapeError when data or mask lengths disagree with the shape.
  void check() const;
};

}  // namespace cross360

namespace cross360 {

/// Halves a height x width mask; a coarse pixel is valid when at least 3 of
/// its 4 children are.
Mask downsample_mask_majority(const Mask& mask, int height, int width);

}  // namespace cross360
