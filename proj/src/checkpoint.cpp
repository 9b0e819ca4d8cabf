#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>
#include <stdexcept>

#include "hxbcos/model.hpp"

namespace hxb {

namespace {

constexpr char kMagic[4] = {'H', 'X', 'B', '1'};
constexpr std::uint16_t kVersion = 1;

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

class Writer {
 public:
  void bytes(const void* p, std::size_t n) {
    const auto* b = static_cast<const std::uint8_t*>(p);
    out_.insert(out_.end(), b, b + n);
  }
  void u16(std::uint16_t v) { bytes(&v, 2); }
  void u32(std::uint32_t v) { bytes(&v, 4); }
  void f32(float v) { bytes(&v, 4); }
  void text(const std::string& s) {
    u32(static_cast<std::uint32_t>(s.size()));
    bytes(s.data(), s.size());
  }
  std::vector<std::uint8_t> take() { return std::move(out_); }

 private:
  std::vector<std::uint8_t> out_;
};

class Reader {
 public:
  explicit Reader(const std::vector<std::uint8_t>& in) : in_(in) {}
  void bytes(void* p, std::size_t n) {
    if (pos_ + n > in_.size()) throw std::runtime_error("checkpoint truncated");
    std::memcpy(p, in_.data() + pos_, n);
    pos_ += n;
  }
  std::uint16_t u16() {
    std::uint16_t v;
    bytes(&v, 2);
    return v;
  }
  std::uint32_t u32() {
    std::uint32_t v;
    bytes(&v, 4);
    return v;
  }
  float f32() {
    float v;
    bytes(&v, 4);
    return v;
  }
  std::string text() {
    std::string s(u32(), '\0');
    bytes(s.data(), s.size());
    return s;
  }
  bool done() const { return pos_ == in_.size(); }

 private:
  const std::vector<std::uint8_t>& in_;
  std::size_t pos_ = 0;
};

}  // namespace

std::vector<std::uint8_t> serialize_checkpoint(const Model& model, const Metadata& metadata) {
  std::map<std::string, std::string> entries = model.config().to_entries();
  for (const auto& [k, v] : metadata) {
    if (k.rfind("model.", 0) == 0) throw std::invalid_argument("metadata key '" + k + "' is reserved");
    if (k.find_first_of("=\n") != std::string::npos || v.find('\n') != std::string::npos) {
      throw std::invalid_argument("metadata entries may not contain '=' in keys or newlines");
    }
    entries[k] = v;
  }
  std::string config;
  for (const auto& [k, v] : entries) config += k + "=" + v + "\n";

  Writer w;
  w.bytes(kMagic, 4);
  w.u16(kVersion);
  w.text(config);
  for (const auto& [name, t] : model.parameters()) {
    w.text(name);
    w.u32(static_cast<std::uint32_t>(t.dim()));
    for (auto e : t.shape()) w.u32(static_cast<std::uint32_t>(e));
    for (double v : t.data()) w.f32(static_cast<float>(v));
  }
  return w.take();
}

void save_checkpoint(const std::filesystem::path& path, const Model& model, const Metadata& metadata) {
  const auto bytes = serialize_checkpoint(model, metadata);
  const auto tmp = std::filesystem::path(path).concat(".tmp");
  {
    std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
    if (!f) throw std::runtime_error("cannot write checkpoint " + tmp.string());
    f.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!f) throw std::runtime_error("failed writing checkpoint " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

Checkpoint deserialize_checkpoint(const std::vector<std::uint8_t>& bytes) {
  Reader r(bytes);
  char magic[4];
  r.bytes(magic, 4);
  if (std::memcmp(magic, kMagic, 4) != 0) throw std::runtime_error("not a checkpoint (bad magic)");
  if (const auto v = r.u16(); v != kVersion) {
    throw std::runtime_error("unsupported checkpoint version " + std::to_string(v));
  }
  std::map<std::string, std::string> entries;
  {
    const std::string config = r.text();
    std::size_t start = 0;
    while (start < config.size()) {
      const auto end = config.find('\n', start);
      const std::string line = config.substr(start, end - start);
      const auto eq = line.find('=');
      if (eq == std::string::npos) throw std::runtime_error("malformed checkpoint config line '" + line + "'");
      entries[line.substr(0, eq)] = line.substr(eq + 1);
      if (end == std::string::npos) break;
      start = end + 1;
    }
  }
  Metadata metadata;
  for (const auto& [k, v] : entries) {
    if (k.rfind("model.", 0) != 0) metadata[k] = v;
  }

  Model model(ModelConfig::from_entries(entries));
  std::map<std::string, Tensor> params;
  for (auto& [name, t] : model.parameters()) params.emplace(name, t);
  std::size_t loaded = 0;
  while (!r.done()) {
    const std::string name = r.text();
    Shape shape(r.u32());
    for (auto& e : shape) e = r.u32();
    auto it = params.find(name);
    if (it == params.end()) throw std::runtime_error("checkpoint has unknown parameter '" + name + "'");
    if (it->second.shape() != shape) {
      throw std::runtime_error("parameter '" + name + "' has shape " + to_string(shape) + ", model expects " +
                               to_string(it->second.shape()));
    }
    for (auto& v : it->second.mutable_data()) v = static_cast<double>(r.f32());
    ++loaded;
  }
  if (loaded != params.size()) {
    throw std::runtime_error("checkpoint holds " + std::to_string(loaded) + " of " + std::to_string(params.size()) +
                             " parameters");
  }
  return Checkpoint{std::move(model), std::move(metadata)};
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open checkpoint " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  return deserialize_checkpoint(bytes);
}

}  // namespace hxb
