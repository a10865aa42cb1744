#include "cross360/grid.hpp"

#include <algorithm>
#include <string>

#include "cross360/error.hpp"

namespace cross360 {

Grid::Grid(int channels, int height, int width, double fill)
    : channels(channels), height(height), width(width) {
  if (channels <= 0 || height <= 0 || width <= 0) {
    throw ShapeError("grid dimensions must be positive, got " + std::to_string(channels) + "x" +
                     std::to_string(height) + "x" + std::to_string(width));
  }
  data.assign(static_cast<std::size_t>(channels) * height * width, fill);
}

std::size_t Grid::valid_count() const {
  if (!mask) return pixels();
  return static_cast<std::size_t>(
      std::count_if(mask->begin(), mask->end(), [](std::uint8_t m) { return m != 0; }));
}

void Grid::check() const {
  if (data.size() != static_cast<std::size_t>(channels) * height * width) {
    throw ShapeError("grid data length does not match its shape");
  }
  if (mask && mask->size() != pixels()) throw ShapeError("grid mask length does not match its shape");
}

}  // namespace cross360

namespace cross360 {

Mask downsample_mask_majority(const Mask& mask, int height, int width) {
  if (mask.size() != static_cast<std::size_t>(height) * width || height % 2 || width % 2) {
    throw ShapeError("mask downsampling needs an even-sized mask of matching length");
  }
  const int h = height / 2;
  const int w = width / 2;
  Mask out(static_cast<std::size_t>(h) * w, 0);
  for (int r = 0; r < h; ++r) {
    for (int c = 0; c < w; ++c) {
      int valid = 0;
      for (int dr = 0; dr < 2; ++dr) {
        for (int dc = 0; dc < 2; ++dc) valid += mask[static_cast<std::size_t>(2 * r + dr) * width + 2 * c + dc] != 0;
      }
      out[static_cast<std::size_t>(r) * w + c] = valid >= 3 ? 1 : 0;
    }
  }
  return out;
}

}  // namespace cross360
