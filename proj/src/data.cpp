#include "hxbcos/data.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <fstream>
#include <map>
#include <numbers>
#include <random>
#include <stdexcept>

#include "hxbcos/image_io.hpp"

namespace hxb {

std::size_t DatasetManifest::image_size() const { return samples.empty() ? 0 : samples.front().image.extent(1); }

namespace {

void require_image(const Tensor& t, std::size_t channels, const char* what) {
  if (t.dim() != 3 || t.extent(0) != channels) {
    throw ShapeError(std::string(what) + " expects [" + std::to_string(channels) + ",H,W], got " +
                     to_string(t.shape()));
  }
}

}  // namespace

Tensor encode_six_channel(const Tensor& rgb) {
  require_image(rgb, 3, "encode_six_channel");
  const std::size_t plane = rgb.extent(1) * rgb.extent(2);
  const auto src = rgb.data();
  for (double v : src) {
    if (!(v >= 0.0 && v <= 1.0)) throw std::invalid_argument("pixel value " + std::to_string(v) + " outside [0,1]");
  }
  Tensor out({6, rgb.extent(1), rgb.extent(2)});
  auto d = out.mutable_data();
  std::copy(src.begin(), src.end(), d.begin());
  for (std::size_t i = 0; i < 3 * plane; ++i) d[3 * plane + i] = 1.0 - src[i];
  return out;
}

Tensor pad_quaternion(const Tensor& six) {
  require_image(six, 6, "pad_quaternion");
  Tensor out({8, six.extent(1), six.extent(2)});
  std::copy(six.data().begin(), six.data().end(), out.mutable_data().begin());
  return out;
}

Tensor encode_input(const Tensor& rgb, std::size_t channels) {
  if (channels == 6) return encode_six_channel(rgb);
  if (channels == 8) return pad_quaternion(encode_six_channel(rgb));
  throw std::invalid_argument("unsupported input channel count " + std::to_string(channels) + " (expected 6 or 8)");
}

Tensor stack(const std::vector<Tensor>& images) {
  if (images.empty()) throw std::invalid_argument("stack of zero images");
  const Shape& s = images.front().shape();
  Shape out_shape{images.size()};
  out_shape.insert(out_shape.end(), s.begin(), s.end());
  std::vector<double> values;
  values.reserve(numel(out_shape));
  for (const auto& im : images) {
    if (im.shape() != s) throw ShapeError("stack: " + to_string(im.shape()) + " vs " + to_string(s));
    values.insert(values.end(), im.data().begin(), im.data().end());
  }
  return Tensor(std::move(out_shape), std::move(values));
}

Tensor resize_bilinear(const Tensor& image, std::size_t out_h, std::size_t out_w) {
  if (image.dim() != 3) throw ShapeError("resize expects [C,H,W], got " + to_string(image.shape()));
  if (out_h == 0 || out_w == 0) throw std::invalid_argument("resize to an empty image");
  const std::size_t c = image.extent(0), h = image.extent(1), w = image.extent(2);
  struct Tap {
    std::size_t i0, i1;
    double f;
  };
  auto taps = [](std::size_t in, std::size_t out) {
    std::vector<Tap> t(out);
    const double ratio = static_cast<double>(in) / static_cast<double>(out);
    for (std::size_t o = 0; o < out; ++o) {
      const double src = std::clamp((static_cast<double>(o) + 0.5) * ratio - 0.5, 0.0, static_cast<double>(in - 1));
      const auto i0 = static_cast<std::size_t>(std::floor(src));
      t[o] = {i0, std::min(i0 + 1, in - 1), src - static_cast<double>(i0)};
    }
    return t;
  };
  const auto ty = taps(h, out_h), tx = taps(w, out_w);
  Tensor out({c, out_h, out_w});
  auto d = out.mutable_data();
  const auto s = image.data();
  for (std::size_t ch = 0; ch < c; ++ch) {
    const double* p = s.data() + ch * h * w;
    for (std::size_t y = 0; y < out_h; ++y) {
      const auto& a = ty[y];
      for (std::size_t x = 0; x < out_w; ++x) {
        const auto& b = tx[x];
        const double top = p[a.i0 * w + b.i0] * (1.0 - b.f) + p[a.i0 * w + b.i1] * b.f;
        const double bot = p[a.i1 * w + b.i0] * (1.0 - b.f) + p[a.i1 * w + b.i1] * b.f;
        d[(ch * out_h + y) * out_w + x] = top * (1.0 - a.f) + bot * a.f;
      }
    }
  }
  return out;
}

Tensor crop(const Tensor& image, std::size_t y0, std::size_t x0, std::size_t h, std::size_t w) {
  if (image.dim() != 3) throw ShapeError("crop expects [C,H,W], got " + to_string(image.shape()));
  if (h == 0 || w == 0 || y0 + h > image.extent(1) || x0 + w > image.extent(2)) {
    throw std::invalid_argument("crop window outside image " + to_string(image.shape()));
  }
  const std::size_t c = image.extent(0), ih = image.extent(1), iw = image.extent(2);
  Tensor out({c, h, w});
  auto d = out.mutable_data();
  const auto s = image.data();
  for (std::size_t ch = 0; ch < c; ++ch)
    for (std::size_t y = 0; y < h; ++y)
      std::copy_n(s.begin() + static_cast<std::ptrdiff_t>((ch * ih + y0 + y) * iw + x0), w,
                  d.begin() + static_cast<std::ptrdiff_t>((ch * h + y) * w));
  return out;
}

Tensor hflip(const Tensor& image) {
  if (image.dim() != 3) throw ShapeError("hflip expects [C,H,W], got " + to_string(image.shape()));
  Tensor out = image.clone();
  auto d = out.mutable_data();
  const std::size_t w = image.extent(2);
  for (std::size_t row = 0; row < image.extent(0) * image.extent(1); ++row) {
    std::reverse(d.begin() + static_cast<std::ptrdiff_t>(row * w), d.begin() + static_cast<std::ptrdiff_t>((row + 1) * w));
  }
  return out;
}

Tensor resize_center_crop(const Tensor& image, std::size_t size) {
  if (image.dim() != 3) throw ShapeError("resize expects [C,H,W], got " + to_string(image.shape()));
  const std::size_t h = image.extent(1), w = image.extent(2);
  std::size_t rh = size, rw = size;
  if (h < w) {
    rw = std::max<std::size_t>(size, static_cast<std::size_t>(std::lround(static_cast<double>(w) * size / h)));
  } else if (w < h) {
    rh = std::max<std::size_t>(size, static_cast<std::size_t>(std::lround(static_cast<double>(h) * size / w)));
  }
  Tensor r = resize_bilinear(image, rh, rw);
  return crop(r, (rh - size) / 2, (rw - size) / 2, size, size);
}

Rng sample_rng(std::uint64_t seed, std::uint64_t sample_index, std::uint64_t epoch) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(sample_index), static_cast<std::uint32_t>(sample_index >> 32),
                    static_cast<std::uint32_t>(epoch), static_cast<std::uint32_t>(epoch >> 32)};
  return Rng(seq);
}

Sample augment(const Sample& sample, Rng& rng, std::size_t out_size, const AugmentOptions& options) {
  const Tensor& im = sample.image;
  const std::size_t h = im.extent(1), w = im.extent(2), side = std::min(h, w);
  const double scale = std::uniform_real_distribution<double>(options.min_scale, options.max_scale)(rng);
  const std::size_t cs = std::clamp<std::size_t>(
      static_cast<std::size_t>(std::lround(static_cast<double>(side) * std::sqrt(scale))), 1, side);
  const std::size_t y0 = std::uniform_int_distribution<std::size_t>(0, h - cs)(rng);
  const std::size_t x0 = std::uniform_int_distribution<std::size_t>(0, w - cs)(rng);
  const bool flip = std::bernoulli_distribution(options.flip_probability)(rng);

  Sample out;
  out.label = sample.label;
  out.id = sample.id;
  out.image = resize_bilinear(crop(im, y0, x0, cs, cs), out_size, out_size);
  if (flip) out.image = hflip(out.image);
  if (sample.box) {
    const auto& b = *sample.box;
    const std::size_t bx0 = std::max(b.x0, x0), by0 = std::max(b.y0, y0);
    const std::size_t bx1 = std::min(b.x1, x0 + cs), by1 = std::min(b.y1, y0 + cs);
    if (bx0 < bx1 && by0 < by1) {
      const double f = static_cast<double>(out_size) / static_cast<double>(cs);
      auto map_lo = [&](std::size_t v, std::size_t o) { return static_cast<std::size_t>(std::floor((v - o) * f)); };
      auto map_hi = [&](std::size_t v, std::size_t o) {
        return std::min(out_size, static_cast<std::size_t>(std::ceil((v - o) * f)));
      };
      BoundingBox nb{map_lo(bx0, x0), map_lo(by0, y0), map_hi(bx1, x0), map_hi(by1, y0)};
      if (flip) nb = {out_size - nb.x1, nb.y0, out_size - nb.x0, nb.y1};
      out.box = nb;
    }
  }
  return out;
}

namespace {

std::array<double, 3> hsv_to_rgb(double hue, double sat, double val) {
  const double h6 = hue * 6.0;
  const int sector = static_cast<int>(std::floor(h6)) % 6;
  const double f = h6 - std::floor(h6);
  const double p = val * (1 - sat), q = val * (1 - sat * f), t = val * (1 - sat * (1 - f));
  switch (sector) {
    case 0:
      return {val, t, p};
    case 1:
      return {q, val, p};
    case 2:
      return {p, val, t};
    case 3:
      return {p, q, val};
    case 4:
      return {t, p, val};
    default:
      return {val, p, q};
  }
}

// Shape membership in coordinates normalized by the shape's half extent.
bool inside_shape(std::size_t cls, double u, double v) {
  switch (cls) {
    case 0:
      return u * u + v * v <= 1.0;
    case 1:
      return std::abs(u) <= 0.85 && std::abs(v) <= 0.85;
    case 2:
      return v >= -1.0 && v <= 0.8 && std::abs(u) <= (v + 1.0) / 1.8;
    default:
      return (std::abs(u) <= 0.3 && std::abs(v) <= 1.0) || (std::abs(v) <= 0.3 && std::abs(u) <= 1.0);
  }
}

Sample render_shape(std::size_t cls, std::size_t size, Rng& rng) {
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  const double s = static_cast<double>(size);

  const double gray = 0.3 + 0.4 * unit(rng);
  std::array<double, 3> base{};
  for (auto& b : base) b = std::clamp(gray + 0.1 * (unit(rng) - 0.5), 0.0, 1.0);
  const double freq = 2.0 * std::numbers::pi * (2.0 + 4.0 * unit(rng)) / s;
  const double angle = std::numbers::pi * unit(rng);
  const double phase = 2.0 * std::numbers::pi * unit(rng);
  const double fx = std::cos(angle) * freq, fy = std::sin(angle) * freq;

  const auto color = hsv_to_rgb(unit(rng), 0.7 + 0.3 * unit(rng), 0.7 + 0.3 * unit(rng));
  const double r = s * (0.18 + 0.14 * unit(rng));
  const double cx = r + 1.0 + (s - 2.0 * r - 2.0) * unit(rng);
  const double cy = r + 1.0 + (s - 2.0 * r - 2.0) * unit(rng);

  Sample out;
  out.label = cls;
  out.image = Tensor({3, size, size});
  auto d = out.image.mutable_data();
  constexpr int kSuper = 4;
  std::size_t bx0 = size, by0 = size, bx1 = 0, by1 = 0;
  for (std::size_t y = 0; y < size; ++y) {
    for (std::size_t x = 0; x < size; ++x) {
      int hits = 0;
      for (int sy = 0; sy < kSuper; ++sy)
        for (int sx = 0; sx < kSuper; ++sx) {
          const double px = static_cast<double>(x) + (sx + 0.5) / kSuper;
          const double py = static_cast<double>(y) + (sy + 0.5) / kSuper;
          hits += inside_shape(cls, (px - cx) / r, (py - cy) / r);
        }
      const double cov = static_cast<double>(hits) / (kSuper * kSuper);
      if (hits > 0) {
        bx0 = std::min(bx0, x), by0 = std::min(by0, y);
        bx1 = std::max(bx1, x + 1), by1 = std::max(by1, y + 1);
      }
      const double wave = 0.08 * std::sin(fx * static_cast<double>(x) + fy * static_cast<double>(y) + phase);
      for (std::size_t c = 0; c < 3; ++c) {
        const double bg = std::clamp(base[c] + wave + 0.1 * (unit(rng) - 0.5), 0.0, 1.0);
        d[(c * size + y) * size + x] = bg * (1.0 - cov) + color[c] * cov;
      }
    }
  }
  out.box = BoundingBox{bx0, by0, bx1, by1};
  return out;
}

constexpr std::uint64_t kSynthStream = 0x5f3759df;

bool is_image_file(const std::filesystem::path& p) {
  std::string e = p.extension().string();
  std::transform(e.begin(), e.end(), e.begin(), [](unsigned char c) { return std::tolower(c); });
  return e == ".png" || e == ".ppm" || e == ".pgm" || e == ".pnm";
}

}  // namespace

DatasetManifest synth_shapes(std::size_t num_per_class, std::size_t image_size, std::uint64_t seed) {
  if (image_size < 32) throw std::invalid_argument("synthetic images need image_size >= 32");
  DatasetManifest m;
  m.class_names.assign(std::begin(kShapeClasses), std::end(kShapeClasses));
  m.split_seed = seed;
  const std::size_t total = num_per_class * m.class_names.size();
  m.samples.reserve(total);
  for (std::size_t i = 0; i < total; ++i) {
    const std::size_t cls = i % m.class_names.size();
    Rng rng = sample_rng(seed, i, kSynthStream);
    Sample s = render_shape(cls, image_size, rng);
    s.id = "synth/" + m.class_names[cls] + "/" + std::to_string(i / m.class_names.size());
    m.samples.push_back(std::move(s));
  }
  return m;
}

DatasetManifest load_image_folder(const std::filesystem::path& root, std::size_t image_size) {
  namespace fs = std::filesystem;
  if (!fs::is_directory(root)) throw std::runtime_error("dataset root " + root.string() + " is not a directory");
  std::vector<fs::path> class_dirs;
  for (const auto& e : fs::directory_iterator(root)) {
    if (e.is_directory()) class_dirs.push_back(e.path());
  }
  std::sort(class_dirs.begin(), class_dirs.end());
  if (class_dirs.empty()) throw std::runtime_error("dataset root " + root.string() + " has no class directories");

  DatasetManifest m;
  m.root = root;
  for (std::size_t cls = 0; cls < class_dirs.size(); ++cls) {
    m.class_names.push_back(class_dirs[cls].filename().string());
    std::vector<fs::path> files;
    for (const auto& e : fs::directory_iterator(class_dirs[cls])) {
      if (e.is_regular_file() && is_image_file(e.path())) files.push_back(e.path());
    }
    std::sort(files.begin(), files.end());
    std::size_t loaded = 0;
    for (const auto& f : files) {
      const std::string rel = fs::relative(f, root).generic_string();
      try {
        Sample s;
        s.image = resize_center_crop(read_image(f), image_size);
        s.label = cls;
        s.id = rel;
        m.samples.push_back(std::move(s));
        ++loaded;
      } catch (const std::exception& e) {
        m.warnings.push_back("skipped " + rel + ": " + e.what());
      }
    }
    if (loaded == 0) throw std::runtime_error("class '" + m.class_names[cls] + "' has no readable images");
  }
  return m;
}

Tensor encode_samples(const DatasetManifest& manifest, const std::vector<std::size_t>& indices,
                      std::size_t channels) {
  std::vector<Tensor> images;
  images.reserve(indices.size());
  for (std::size_t i : indices) images.push_back(encode_input(manifest.samples.at(i).image, channels));
  return stack(images);
}

void split_manifest(DatasetManifest& manifest, double test_fraction, std::uint64_t seed) {
  if (!(test_fraction >= 0.0 && test_fraction < 1.0)) throw std::invalid_argument("test fraction must be in [0,1)");
  std::vector<std::vector<std::size_t>> by_class(manifest.num_classes());
  for (std::size_t i = 0; i < manifest.samples.size(); ++i) {
    const std::size_t label = manifest.samples[i].label;
    if (label >= by_class.size()) throw std::invalid_argument("sample label out of range");
    by_class[label].push_back(i);
  }
  Rng rng(seed);
  manifest.train.clear();
  manifest.test.clear();
  for (auto& idx : by_class) {
    std::shuffle(idx.begin(), idx.end(), rng);
    const auto n_test = static_cast<std::size_t>(std::lround(test_fraction * static_cast<double>(idx.size())));
    manifest.test.insert(manifest.test.end(), idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(n_test));
    manifest.train.insert(manifest.train.end(), idx.begin() + static_cast<std::ptrdiff_t>(n_test), idx.end());
  }
  std::sort(manifest.train.begin(), manifest.train.end());
  std::sort(manifest.test.begin(), manifest.test.end());
  manifest.split_seed = seed;
}

void write_index(const DatasetManifest& manifest, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write index " + path.string());
  for (const auto& s : manifest.samples) out << s.id << '\t' << s.label << '\n';
}

DatasetManifest load_index(const std::filesystem::path& root, const std::filesystem::path& index,
                           std::size_t image_size) {
  std::ifstream in(index);
  if (!in) throw std::runtime_error("cannot open index " + index.string());
  DatasetManifest m;
  m.root = root;
  std::map<std::size_t, std::string> names;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    const auto tab = line.find('\t');
    if (tab == std::string::npos) {
      throw std::runtime_error(index.string() + ":" + std::to_string(line_no) + ": expected path<TAB>class");
    }
    const std::string rel = line.substr(0, tab);
    const std::size_t label = std::stoul(line.substr(tab + 1));
    const std::string cls_name = std::filesystem::path(rel).begin()->string();
    if (auto [it, fresh] = names.emplace(label, cls_name); !fresh && it->second != cls_name) {
      throw std::runtime_error("class " + std::to_string(label) + " maps to both '" + it->second + "' and '" +
                               cls_name + "'");
    }
    try {
      Sample s;
      s.image = resize_center_crop(read_image(root / rel), image_size);
      s.label = label;
      s.id = rel;
      m.samples.push_back(std::move(s));
    } catch (const std::exception& e) {
      m.warnings.push_back("skipped " + rel + ": " + e.what());
    }
  }
  for (std::size_t k = 0; k < names.size(); ++k) {
    auto it = names.find(k);
    if (it == names.end()) throw std::runtime_error("index has no samples for class " + std::to_string(k));
    m.class_names.push_back(it->second);
  }
  return m;
}

}  // namespace hxb
