#pragma once

// File formats: PNG (8-bit images, 16-bit depth), PFM (float32 little endian,
// scale -1.0) and atomic file writes.

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "cross360/grid.hpp"

namespace cross360 {

/// Depth in meters times this divisor is stored in 16-bit PNGs.
inline constexpr double kDepthPngDivisor = 4000.0;

std::vector<std::uint8_t> read_file(const std::string& path);
std::string read_text_file(const std::string& path);

/// Writes to a sibling temporary file and renames it into place.
void write_file_atomic(const std::string& path, const void* data, std::size_t size);
void write_text_file_atomic(const std::string& path, std::string_view text);

/// PFM with 1 ("Pf") or 3 ("PF") channels, rows stored bottom to top.
std::vector<std::uint8_t> encode_pfm(const Grid& grid);
Grid decode_pfm(const std::vector<std::uint8_t>& bytes);
void write_pfm(const std::string& path, const Grid& grid);
Grid read_pfm(const std::string& path);

/// 8-bit PNG with 1 or 3 channels; values in [0, 1] map to [0, 255].
void write_png8(const std::string& path, const Grid& grid);
/// 16-bit single-channel depth PNG: round(depth * 4000), clamped to [0, 65535].
void write_depth_png16(const std::string& path, const Grid& depth);
/// 8-bit single-channel mask PNG: 255 valid, 0 invalid.
void write_mask_png(const std::string& path, const Mask& mask, int height, int width);

/// 8-bit PNGs load as [0, 1] with up to three channels (alpha dropped,
/// gray kept as one channel). 16-bit PNGs load as depth (value / 4000).
Grid read_png(const std::string& path);
/// Nonzero pixels are valid.
Mask read_mask_png(const std::string& path, int* height = nullptr, int* width = nullptr);

/// Dispatches on extension: .pfm or .png.
Grid read_image(const std::string& path);

}  // namespace cross360
