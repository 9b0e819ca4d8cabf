#include "hxbcos/model.hpp"

#include <charconv>
#include <cmath>
#include <sstream>
#include <stdexcept>

#include "hxbcos/ops.hpp"

namespace hxb {

std::string to_string(Variant v) {
  switch (v) {
    case Variant::real:
      return "real";
    case Variant::ph:
      return "ph";
    case Variant::quaternion:
      return "quaternion";
  }
  return "?";
}

Variant parse_variant(const std::string& s) {
  if (s == "real") return Variant::real;
  if (s == "ph") return Variant::ph;
  if (s == "quaternion") return Variant::quaternion;
  throw std::invalid_argument("unknown variant '" + s + "' (expected real, ph or quaternion)");
}

ModelConfig ModelConfig::desk(Variant variant, std::size_t n) {
  ModelConfig c;
  c.variant = variant;
  c.n = variant == Variant::ph ? n : (variant == Variant::quaternion ? 4 : 1);
  c.input_channels = 6 % c.algebra_dim() == 0 ? 6 : 8;
  c.logit_scale = c.layer_gain();
  return c;
}

std::size_t ModelConfig::algebra_dim() const {
  switch (variant) {
    case Variant::real:
      return 1;
    case Variant::ph:
      return n;
    case Variant::quaternion:
      return 4;
  }
  return 1;
}

void ModelConfig::validate() const {
  if (b_exp < 1.0) throw std::invalid_argument("B exponent must be >= 1");
  if (maxout_units == 0) throw std::invalid_argument("maxout_units must be positive");
  if (num_classes == 0) throw std::invalid_argument("num_classes must be positive");
  if (!(logit_scale > 0.0) || !std::isfinite(logit_scale)) throw std::invalid_argument("logit_scale must be positive");
  if (stage_widths.empty()) throw std::invalid_argument("at least one stage is required");
  if (stage_widths.size() != stage_strides.size()) {
    throw std::invalid_argument("stage_widths and stage_strides differ in length");
  }
  if (variant == Variant::ph && n == 0) throw std::invalid_argument("ph variant needs n >= 1");
  if (variant == Variant::quaternion && input_channels != 8) {
    throw std::invalid_argument("quaternion models take 8 input channels (6 encoded + 2 padding)");
  }
  const std::size_t d = algebra_dim();
  if (input_channels == 0 || input_channels % d != 0) {
    throw std::invalid_argument("input channels " + std::to_string(input_channels) + " not divisible by n=" +
                                std::to_string(d));
  }
  for (std::size_t k = 0; k < stage_widths.size(); ++k) {
    if (stage_strides[k] == 0) throw std::invalid_argument("stage " + std::to_string(k + 1) + " has stride 0");
    if (stage_widths[k] == 0 || stage_widths[k] % d != 0) {
      throw std::invalid_argument("stage " + std::to_string(k + 1) + " width " + std::to_string(stage_widths[k]) +
                                  " not divisible by n=" + std::to_string(d));
    }
  }
}

namespace {

std::string join(const std::vector<std::size_t>& v) {
  std::string s;
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (i) s += ',';
    s += std::to_string(v[i]);
  }
  return s;
}

std::vector<std::size_t> split_sizes(const std::string& s) {
  std::vector<std::size_t> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) out.push_back(std::stoul(item));
  return out;
}

std::string format_double(double v) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

double parse_double(const std::string& s) {
  double v = 0.0;
  auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (res.ec != std::errc{}) throw std::invalid_argument("bad number '" + s + "'");
  return v;
}

const std::string& require(const std::map<std::string, std::string>& m, const std::string& key) {
  auto it = m.find(key);
  if (it == m.end()) throw std::invalid_argument("model config is missing '" + key + "'");
  return it->second;
}

}  // namespace

std::map<std::string, std::string> ModelConfig::to_entries() const {
  return {
      {"model.variant", to_string(variant)},
      {"model.n", std::to_string(n)},
      {"model.b_exp", format_double(b_exp)},
      {"model.maxout_units", std::to_string(maxout_units)},
      {"model.stage_widths", join(stage_widths)},
      {"model.stage_strides", join(stage_strides)},
      {"model.dense_connectivity", dense_connectivity ? "1" : "0"},
      {"model.input_channels", std::to_string(input_channels)},
      {"model.num_classes", std::to_string(num_classes)},
      {"model.image_size", std::to_string(image_size)},
      {"model.seed", std::to_string(seed)},
      {"model.logit_scale", format_double(logit_scale)},
  };
}

ModelConfig ModelConfig::from_entries(const std::map<std::string, std::string>& e) {
  ModelConfig c;
  c.variant = parse_variant(require(e, "model.variant"));
  c.n = std::stoul(require(e, "model.n"));
  c.b_exp = parse_double(require(e, "model.b_exp"));
  c.maxout_units = std::stoul(require(e, "model.maxout_units"));
  c.stage_widths = split_sizes(require(e, "model.stage_widths"));
  c.stage_strides = split_sizes(require(e, "model.stage_strides"));
  c.dense_connectivity = require(e, "model.dense_connectivity") == "1";
  c.input_channels = std::stoul(require(e, "model.input_channels"));
  c.num_classes = std::stoul(require(e, "model.num_classes"));
  c.image_size = std::stoul(require(e, "model.image_size"));
  c.seed = std::stoull(require(e, "model.seed"));
  if (auto it = e.find("model.logit_scale"); it != e.end()) c.logit_scale = parse_double(it->second);
  return c;
}

namespace {

BcosConv make_stage(const ModelConfig& c, std::size_t cin, std::size_t width, std::size_t stride, Rng& rng) {
  const std::size_t units = width * c.maxout_units;
  BcosOptions opt;
  opt.b_exp = c.b_exp;
  opt.stride = stride;
  opt.padding = 1;
  opt.maxout_units = c.maxout_units;
  switch (c.variant) {
    case Variant::real:
      return BcosConv(DenseWeight::create(units, cin, 3, 3, rng), opt);
    case Variant::ph:
      return BcosConv(PhWeightSpec::create(c.n, units, cin, 3, 3, AlgebraMode::learnable, rng), opt);
    case Variant::quaternion:
      return BcosConv(PhWeightSpec::create(4, units, cin, 3, 3, AlgebraMode::hamilton_fixed, rng), opt);
  }
  throw std::logic_error("unreachable");
}

std::size_t stage_out_channels(const ModelConfig& c, std::size_t k, std::size_t cin) {
  return c.dense_connectivity && c.stage_strides[k] == 1 ? cin + c.stage_widths[k] : c.stage_widths[k];
}

BcosConv build_head(const ModelConfig& c, Rng& rng) {
  std::size_t cin = c.input_channels;
  for (std::size_t k = 0; k < c.stage_widths.size(); ++k) cin = stage_out_channels(c, k, cin);
  BcosOptions opt;
  opt.b_exp = c.b_exp;
  opt.stride = 1;
  opt.padding = 0;
  opt.maxout_units = 1;
  return BcosConv(DenseWeight::create(c.num_classes, cin, 1, 1, rng), opt);
}

}  // namespace

double ModelConfig::layer_gain() const {
  double gain = 1.0;
  std::size_t cin = input_channels;
  for (std::size_t k = 0; k < stage_widths.size(); ++k) {
    gain *= 100.0 / std::sqrt(9.0 * static_cast<double>(cin));
    cin = stage_out_channels(*this, k, cin);
  }
  return gain * 100.0 / std::sqrt(static_cast<double>(cin));
}

Model::Model(ModelConfig config) : config_(std::move(config)), head_(build_layers()) {}

BcosConv Model::build_layers() {
  config_.validate();
  Rng rng(config_.seed);
  std::size_t cin = config_.input_channels;
  for (std::size_t k = 0; k < config_.stage_widths.size(); ++k) {
    stages_.push_back(make_stage(config_, cin, config_.stage_widths[k], config_.stage_strides[k], rng));
    cin = stage_out_channels(config_, k, cin);
  }
  return build_head(config_, rng);
}

void Model::check_input(const Tensor& x) const {
  if (x.dim() != 4 || x.extent(1) != config_.input_channels) {
    throw ShapeError("model expects [N," + std::to_string(config_.input_channels) + ",H,W] input, got " +
                     to_string(x.shape()));
  }
}

ForwardTrace Model::trace(const Tensor& x, Dynamics dynamics) const {
  check_input(x);
  ForwardTrace t;
  Tensor h = x;
  for (std::size_t k = 0; k < stages_.size(); ++k) {
    Tensor out = stages_[k].forward(h, dynamics);
    t.layers.push_back(out);
    h = config_.dense_connectivity && config_.stage_strides[k] == 1 ? concat({h, out}, 1) : out;
  }
  t.features = h;
  Tensor class_maps = head_.forward(h, dynamics);
  if (config_.logit_scale != 1.0) class_maps = mul(class_maps, config_.logit_scale);
  t.layers.push_back(class_maps);
  t.logits = global_avg_pool(class_maps);
  t.layers.push_back(t.logits.reshape({t.logits.extent(0), t.logits.extent(1), 1, 1}));
  return t;
}

Tensor Model::forward(const Tensor& x, Dynamics dynamics) const { return trace(x, dynamics).logits; }

std::vector<NamedTensor> Model::parameters() const {
  std::vector<NamedTensor> out;
  for (std::size_t k = 0; k < stages_.size(); ++k) {
    auto p = stages_[k].parameters("stage" + std::to_string(k + 1));
    out.insert(out.end(), p.begin(), p.end());
  }
  auto p = head_.parameters("head");
  out.insert(out.end(), p.begin(), p.end());
  return out;
}

std::vector<std::pair<std::string, ParamCount>> Model::param_breakdown() const {
  std::vector<std::pair<std::string, ParamCount>> out;
  for (std::size_t k = 0; k < stages_.size(); ++k) {
    out.emplace_back("stage" + std::to_string(k + 1), stages_[k].param_count());
  }
  out.emplace_back("head", head_.param_count());
  return out;
}

ParamCount Model::param_count() const {
  ParamCount total;
  for (const auto& [name, c] : param_breakdown()) total += c;
  return total;
}

ParamCount Model::stage_param_count() const {
  ParamCount total;
  for (const auto& s : stages_) total += s.param_count();
  return total;
}

}  // namespace hxb
