#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "hxbcos/tensor.hpp"

namespace hxb {

/// 8-bit RGBA raster, row-major.
struct Rgba8 {
  std::size_t width = 0;
  std::size_t height = 0;
  std::vector<std::uint8_t> pixels;  ///< 4 * width * height
};

/// Decodes a PNG or binary PPM/PGM file into an RGB tensor [3,H,W] with values
/// in [0,1]. Gray images are replicated to three channels. Throws
/// std::runtime_error on unreadable input.
Tensor read_image(const std::filesystem::path& path);

void write_png(const std::filesystem::path& path, const Rgba8& image);
Rgba8 read_png_rgba(const std::filesystem::path& path);

/// Writes an RGB tensor [3,H,W] in [0,1] as an opaque PNG.
void write_png_rgb(const std::filesystem::path& path, const Tensor& rgb);
/// Writes an RGB tensor [3,H,W] in [0,1] as binary PPM (P6).
void write_ppm(const std::filesystem::path& path, const Tensor& rgb);

/// round(clamp(v, 0, 1) * 255)
std::uint8_t to_byte(double v);

}  // namespace hxb
