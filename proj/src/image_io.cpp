#include "hxbcos/image_io.hpp"

#include <png.h>

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <stdexcept>
#include <string>

namespace hxb {

std::uint8_t to_byte(double v) {
  const double c = std::clamp(v, 0.0, 1.0);
  return static_cast<std::uint8_t>(std::lround(c * 255.0));
}

namespace {

Tensor read_png_file(const std::filesystem::path& path) {
  png_image img{};
  img.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_file(&img, path.c_str())) {
    throw std::runtime_error("cannot decode PNG " + path.string() + ": " + img.message);
  }
  img.format = PNG_FORMAT_RGB;
  std::vector<std::uint8_t> buf(PNG_IMAGE_SIZE(img));
  if (!png_image_finish_read(&img, nullptr, buf.data(), 0, nullptr)) {
    png_image_free(&img);
    throw std::runtime_error("cannot decode PNG " + path.string() + ": " + img.message);
  }
  const std::size_t h = img.height, w = img.width;
  Tensor t({3, h, w});
  auto d = t.mutable_data();
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x)
      for (std::size_t c = 0; c < 3; ++c) d[(c * h + y) * w + x] = buf[(y * w + x) * 3 + c] / 255.0;
  return t;
}

// Skips whitespace and '#' comments between PNM header tokens.
std::size_t pnm_token(std::istream& in) {
  int ch = in.get();
  while (ch != EOF) {
    if (ch == '#') {
      while (ch != EOF && ch != '\n') ch = in.get();
    } else if (!std::isspace(ch)) {
      break;
    }
    ch = in.get();
  }
  std::string tok;
  while (ch != EOF && std::isdigit(ch)) {
    tok.push_back(static_cast<char>(ch));
    ch = in.get();
  }
  if (tok.empty()) throw std::runtime_error("malformed PNM header");
  return std::stoul(tok);
}

Tensor read_pnm_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  char magic[2];
  in.read(magic, 2);
  if (!in || magic[0] != 'P' || (magic[1] != '6' && magic[1] != '5')) {
    throw std::runtime_error("unsupported PNM type in " + path.string());
  }
  const bool gray = magic[1] == '5';
  const std::size_t w = pnm_token(in), h = pnm_token(in), maxval = pnm_token(in);
  if (w == 0 || h == 0 || maxval == 0 || maxval > 255) {
    throw std::runtime_error("unsupported PNM geometry in " + path.string());
  }
  const std::size_t ch = gray ? 1 : 3;
  std::vector<std::uint8_t> buf(w * h * ch);
  in.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
  if (!in) throw std::runtime_error("truncated PNM " + path.string());
  Tensor t({3, h, w});
  auto d = t.mutable_data();
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x)
      for (std::size_t c = 0; c < 3; ++c) {
        const std::uint8_t v = buf[(y * w + x) * ch + (gray ? 0 : c)];
        d[(c * h + y) * w + x] = static_cast<double>(v) / static_cast<double>(maxval);
      }
  return t;
}

std::string lower_ext(const std::filesystem::path& p) {
  std::string e = p.extension().string();
  std::transform(e.begin(), e.end(), e.begin(), [](unsigned char c) { return std::tolower(c); });
  return e;
}

}  // namespace

Tensor read_image(const std::filesystem::path& path) {
  const std::string ext = lower_ext(path);
  if (ext == ".png") return read_png_file(path);
  if (ext == ".ppm" || ext == ".pgm" || ext == ".pnm") return read_pnm_file(path);
  throw std::runtime_error("unsupported image type " + path.string());
}

void write_png(const std::filesystem::path& path, const Rgba8& image) {
  if (image.pixels.size() != image.width * image.height * 4) {
    throw std::invalid_argument("RGBA buffer size does not match its geometry");
  }
  png_image img{};
  img.version = PNG_IMAGE_VERSION;
  img.width = static_cast<png_uint_32>(image.width);
  img.height = static_cast<png_uint_32>(image.height);
  img.format = PNG_FORMAT_RGBA;
  if (!png_image_write_to_file(&img, path.c_str(), 0, image.pixels.data(), 0, nullptr)) {
    throw std::runtime_error("cannot write PNG " + path.string() + ": " + img.message);
  }
}

Rgba8 read_png_rgba(const std::filesystem::path& path) {
  png_image img{};
  img.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_file(&img, path.c_str())) {
    throw std::runtime_error("cannot decode PNG " + path.string() + ": " + img.message);
  }
  img.format = PNG_FORMAT_RGBA;
  Rgba8 out;
  out.width = img.width;
  out.height = img.height;
  out.pixels.resize(PNG_IMAGE_SIZE(img));
  if (!png_image_finish_read(&img, nullptr, out.pixels.data(), 0, nullptr)) {
    png_image_free(&img);
    throw std::runtime_error("cannot decode PNG " + path.string() + ": " + img.message);
  }
  return out;
}

void write_png_rgb(const std::filesystem::path& path, const Tensor& rgb) {
  if (rgb.dim() != 3 || rgb.extent(0) != 3) throw ShapeError("expected [3,H,W] image, got " + to_string(rgb.shape()));
  const std::size_t h = rgb.extent(1), w = rgb.extent(2);
  Rgba8 img{w, h, std::vector<std::uint8_t>(w * h * 4, 255)};
  const auto d = rgb.data();
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x)
      for (std::size_t c = 0; c < 3; ++c) img.pixels[(y * w + x) * 4 + c] = to_byte(d[(c * h + y) * w + x]);
  write_png(path, img);
}

void write_ppm(const std::filesystem::path& path, const Tensor& rgb) {
  if (rgb.dim() != 3 || rgb.extent(0) != 3) throw ShapeError("expected [3,H,W] image, got " + to_string(rgb.shape()));
  const std::size_t h = rgb.extent(1), w = rgb.extent(2);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << "P6\n" << w << ' ' << h << "\n255\n";
  const auto d = rgb.data();
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x)
      for (std::size_t c = 0; c < 3; ++c) out.put(static_cast<char>(to_byte(d[(c * h + y) * w + x])));
}

}  // namespace hxb
