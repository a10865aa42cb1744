#include "cross360/io.hpp"

#include <png.h>

#include <algorithm>
#include <csetjmp>
#include <bit>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <cctype>
#include <filesystem>
#include <fstream>
#include <memory>
#include <sstream>

#include "cross360/error.hpp"

namespace cross360 {

namespace fs = std::filesystem;

std::vector<std::uint8_t> read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path + "' for reading");
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (in.bad()) throw IoError("failed reading '" + path + "'");
  return bytes;
}

std::string read_text_file(const std::string& path) {
  const auto bytes = read_file(path);
  return std::string(bytes.begin(), bytes.end());
}

void write_file_atomic(const std::string& path, const void* data, std::size_t size) {
  const fs::path target(path);
  if (target.has_parent_path()) {
    std::error_code ec;
    fs::create_directories(target.parent_path(), ec);
  }
  const std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open '" + tmp + "' for writing");
    out.write(static_cast<const char*>(data), static_cast<std::streamsize>(size));
    out.flush();
    if (!out) throw IoError("failed writing '" + tmp + "'");
  }
  std::error_code ec;
  fs::rename(tmp, target, ec);
  if (ec) {
    fs::remove(tmp, ec);
    throw IoError("cannot move '" + tmp + "' to '" + path + "'");
  }
}

void write_text_file_atomic(const std::string& path, std::string_view text) {
  write_file_atomic(path, text.data(), text.size());
}

namespace {

void put_f32_le(std::vector<std::uint8_t>& out, float v) {
  auto bits = std::bit_cast<std::uint32_t>(v);
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>((bits >> (8 * i)) & 0xFF));
}

float get_f32(const std::uint8_t* p, bool little_endian) {
  std::uint32_t bits = 0;
  for (int i = 0; i < 4; ++i) {
    const int shift = little_endian ? 8 * i : 8 * (3 - i);
    bits |= static_cast<std::uint32_t>(p[i]) << shift;
  }
  return std::bit_cast<float>(bits);
}

}  // namespace

std::vector<std::uint8_t> encode_pfm(const Grid& grid) {
  grid.check();
  if (grid.channels != 1 && grid.channels != 3) {
    throw ValidationError("PFM supports 1 or 3 channels, got " + std::to_string(grid.channels));
  }
  const std::string header = std::string(grid.channels == 3 ? "PF" : "Pf") + "\n" +
                             std::to_string(grid.width) + " " + std::to_string(grid.height) + "\n-1.0\n";
  std::vector<std::uint8_t> out(header.begin(), header.end());
  out.reserve(out.size() + grid.data.size() * 4);
  for (int r = grid.height - 1; r >= 0; --r) {
    for (int c = 0; c < grid.width; ++c) {
      for (int ch = 0; ch < grid.channels; ++ch) put_f32_le(out, static_cast<float>(grid.at(ch, r, c)));
    }
  }
  return out;
}

Grid decode_pfm(const std::vector<std::uint8_t>& bytes) {
  std::size_t pos = 0;
  auto next_token = [&]() {
    while (pos < bytes.size() && std::isspace(bytes[pos])) ++pos;
    std::string token;
    while (pos < bytes.size() && !std::isspace(bytes[pos])) token.push_back(static_cast<char>(bytes[pos++]));
    return token;
  };
  const std::string magic = next_token();
  int channels = 0;
  if (magic == "PF") channels = 3;
  else if (magic == "Pf") channels = 1;
  else throw IoError("not a PFM file (magic '" + magic + "')");
  int width = 0;
  int height = 0;
  double scale = 0.0;
  try {
    width = std::stoi(next_token());
    height = std::stoi(next_token());
    scale = std::stod(next_token());
  } catch (const std::exception&) {
    throw IoError("malformed PFM header");
  }
  ++pos;  // single whitespace byte after the scale
  if (width <= 0 || height <= 0 || scale == 0.0) throw IoError("malformed PFM header");
  const bool little_endian = scale < 0.0;
  const std::size_t needed = static_cast<std::size_t>(width) * height * channels * 4;
  if (bytes.size() < pos + needed) throw IoError("truncated PFM data");
  Grid grid(channels, height, width);
  const std::uint8_t* p = bytes.data() + pos;
  for (int r = height - 1; r >= 0; --r) {
    for (int c = 0; c < width; ++c) {
      for (int ch = 0; ch < channels; ++ch) {
        grid.at(ch, r, c) = get_f32(p, little_endian);
        p += 4;
      }
    }
  }
  return grid;
}

void write_pfm(const std::string& path, const Grid& grid) {
  const auto bytes = encode_pfm(grid);
  write_file_atomic(path, bytes.data(), bytes.size());
}

Grid read_pfm(const std::string& path) {
  try {
    return decode_pfm(read_file(path));
  } catch (const IoError& e) {
    throw IoError(path + ": " + e.what());
  }
}

namespace {

struct PngWriteBuffer {
  std::vector<std::uint8_t> bytes;
};

void png_write_callback(png_structp png, png_bytep data, png_size_t length) {
  auto* buffer = static_cast<PngWriteBuffer*>(png_get_io_ptr(png));
  buffer->bytes.insert(buffer->bytes.end(), data, data + length);
}

void png_flush_callback(png_structp) {}

struct PngErrorMessage {
  char text[256] = {};
};

// libpng requires error handlers to longjmp back to the caller's setjmp.
void png_error_callback(png_structp png, png_const_charp message) {
  auto* err = static_cast<PngErrorMessage*>(png_get_error_ptr(png));
  std::snprintf(err->text, sizeof(err->text), "%s", message);
  png_longjmp(png, 1);
}

void png_warning_callback(png_structp, png_const_charp) {}

// rows: height rows of width * channels samples of (bit_depth / 8) bytes each, big endian for 16 bit
void write_png_rows(const std::string& path, int width, int height, int channels, int bit_depth,
                    const std::vector<std::uint8_t>& pixels) {
  PngErrorMessage err;
  PngWriteBuffer buffer;
  const std::size_t stride = static_cast<std::size_t>(width) * channels * (bit_depth / 8);
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, &err, png_error_callback,
                                            png_warning_callback);
  if (!png) throw IoError("png_create_write_struct failed");
  png_infop info = png_create_info_struct(png);
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw IoError(path + ": libpng: " + err.text);
  }
  {
    png_set_write_fn(png, &buffer, png_write_callback, png_flush_callback);
    const int color = channels == 3 ? PNG_COLOR_TYPE_RGB : PNG_COLOR_TYPE_GRAY;
    png_set_IHDR(png, info, width, height, bit_depth, color, PNG_INTERLACE_NONE,
                 PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
    png_write_info(png, info);
    for (int r = 0; r < height; ++r) {
      png_write_row(png, const_cast<png_bytep>(pixels.data() + r * stride));
    }
    png_write_end(png, nullptr);
  }
  png_destroy_write_struct(&png, &info);
  write_file_atomic(path, buffer.bytes.data(), buffer.bytes.size());
}

struct DecodedPng {
  int width = 0;
  int height = 0;
  int channels = 0;
  int bit_depth = 0;
  std::vector<std::uint8_t> pixels;  // row-major, interleaved
};

struct PngReadCursor {
  const std::vector<std::uint8_t>* bytes;
  std::size_t pos;
};

void png_read_callback(png_structp png, png_bytep out, png_size_t length) {
  auto* cursor = static_cast<PngReadCursor*>(png_get_io_ptr(png));
  if (cursor->pos + length > cursor->bytes->size()) png_error(png, "truncated PNG");
  std::memcpy(out, cursor->bytes->data() + cursor->pos, length);
  cursor->pos += length;
}

DecodedPng decode_png(const std::string& path) {
  const auto bytes = read_file(path);
  if (bytes.size() < 8 || png_sig_cmp(bytes.data(), 0, 8) != 0) throw IoError("'" + path + "' is not a PNG");
  PngErrorMessage err;
  PngReadCursor cursor{&bytes, 0};
  DecodedPng out;
  std::vector<png_bytep> rows;
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, &err, png_error_callback,
                                           png_warning_callback);
  if (!png) throw IoError("png_create_read_struct failed");
  png_infop info = png_create_info_struct(png);
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw IoError(path + ": libpng: " + err.text);
  }
  {
    png_set_read_fn(png, &cursor, png_read_callback);
    png_read_info(png, info);
    const int color = png_get_color_type(png, info);
    const int depth = png_get_bit_depth(png, info);
    if (color == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
    if (color == PNG_COLOR_TYPE_GRAY && depth < 8) png_set_expand_gray_1_2_4_to_8(png);
    if (png_get_valid(png, info, PNG_INFO_tRNS)) png_set_tRNS_to_alpha(png);
    if (color & PNG_COLOR_MASK_ALPHA || png_get_valid(png, info, PNG_INFO_tRNS)) png_set_strip_alpha(png);
    png_read_update_info(png, info);
    out.width = static_cast<int>(png_get_image_width(png, info));
    out.height = static_cast<int>(png_get_image_height(png, info));
    out.bit_depth = png_get_bit_depth(png, info);
    out.channels = png_get_channels(png, info);
    const std::size_t stride = png_get_rowbytes(png, info);
    out.pixels.resize(stride * out.height);
    rows.resize(out.height);
    for (int r = 0; r < out.height; ++r) rows[r] = out.pixels.data() + r * stride;
    png_read_image(png, rows.data());
    png_read_end(png, nullptr);
  }
  png_destroy_read_struct(&png, &info, nullptr);
  return out;
}

}  // namespace

void write_png8(const std::string& path, const Grid& grid) {
  grid.check();
  if (grid.channels != 1 && grid.channels != 3) {
    throw ValidationError("PNG output supports 1 or 3 channels, got " + std::to_string(grid.channels));
  }
  std::vector<std::uint8_t> pixels(grid.data.size());
  std::size_t i = 0;
  for (int r = 0; r < grid.height; ++r) {
    for (int c = 0; c < grid.width; ++c) {
      for (int ch = 0; ch < grid.channels; ++ch) {
        const double v = std::clamp(grid.at(ch, r, c), 0.0, 1.0);
        pixels[i++] = static_cast<std::uint8_t>(std::lround(v * 255.0));
      }
    }
  }
  write_png_rows(path, grid.width, grid.height, grid.channels, 8, pixels);
}

void write_depth_png16(const std::string& path, const Grid& depth) {
  depth.check();
  if (depth.channels != 1) throw ValidationError("depth PNG needs a single channel");
  std::vector<std::uint8_t> pixels(depth.pixels() * 2);
  for (std::size_t p = 0; p < depth.pixels(); ++p) {
    const double scaled = std::clamp(std::round(depth.data[p] * kDepthPngDivisor), 0.0, 65535.0);
    const auto v = static_cast<std::uint16_t>(scaled);
    pixels[2 * p] = static_cast<std::uint8_t>(v >> 8);
    pixels[2 * p + 1] = static_cast<std::uint8_t>(v & 0xFF);
  }
  write_png_rows(path, depth.width, depth.height, 1, 16, pixels);
}

void write_mask_png(const std::string& path, const Mask& mask, int height, int width) {
  if (mask.size() != static_cast<std::size_t>(height) * width) throw ShapeError("mask size mismatch");
  std::vector<std::uint8_t> pixels(mask.size());
  for (std::size_t p = 0; p < mask.size(); ++p) pixels[p] = mask[p] ? 255 : 0;
  write_png_rows(path, width, height, 1, 8, pixels);
}

Grid read_png(const std::string& path) {
  const DecodedPng png = decode_png(path);
  Grid grid(png.channels, png.height, png.width);
  for (int r = 0; r < png.height; ++r) {
    for (int c = 0; c < png.width; ++c) {
      for (int ch = 0; ch < png.channels; ++ch) {
        const std::size_t idx = (static_cast<std::size_t>(r) * png.width + c) * png.channels + ch;
        if (png.bit_depth == 16) {
          const int v = (png.pixels[2 * idx] << 8) | png.pixels[2 * idx + 1];
          grid.at(ch, r, c) = v / kDepthPngDivisor;
        } else {
          grid.at(ch, r, c) = png.pixels[idx] / 255.0;
        }
      }
    }
  }
  return grid;
}

Mask read_mask_png(const std::string& path, int* height, int* width) {
  const DecodedPng png = decode_png(path);
  Mask mask(static_cast<std::size_t>(png.height) * png.width, 0);
  const int bytes_per_sample = png.bit_depth / 8;
  for (std::size_t p = 0; p < mask.size(); ++p) {
    bool any = false;
    for (int i = 0; i < png.channels * bytes_per_sample; ++i) {
      any = any || png.pixels[p * png.channels * bytes_per_sample + i] != 0;
    }
    mask[p] = any ? 1 : 0;
  }
  if (height) *height = png.height;
  if (width) *width = png.width;
  return mask;
}

Grid read_image(const std::string& path) {
  const std::string ext = fs::path(path).extension().string();
  if (ext == ".pfm" || ext == ".PFM") return read_pfm(path);
  if (ext == ".png" || ext == ".PNG") return read_png(path);
  throw IoError("unsupported image format for '" + path + "' (expected .png or .pfm)");
}

}  // namespace cross360
