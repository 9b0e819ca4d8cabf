#include "hxbcos/explain.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>
#include <unordered_set>

#include <json.hpp>

#include "hxbcos/eval.hpp"
#include "hxbcos/ops.hpp"

namespace hxb {

NotDynamicLinearError::NotDynamicLinearError(const std::string& op)
    : std::invalid_argument("operation '" + op + "' is not dynamic-linear in the input"), op_(op) {}

Tensor LinearMap::row(std::size_t r) const {
  if (r >= size()) throw std::out_of_range("row " + std::to_string(r) + " of " + std::to_string(size()));
  const Shape s(input.shape().begin() + 1, input.shape().end());
  const std::size_t n = numel(s);
  const auto rv = rows.data();
  return Tensor(s, std::vector<double>(rv.begin() + static_cast<std::ptrdiff_t>(r * n),
                                       rv.begin() + static_cast<std::ptrdiff_t>((r + 1) * n)));
}

Tensor LinearMap::contributions(std::size_t r) const {
  if (r >= size()) throw std::out_of_range("row " + std::to_string(r) + " of " + std::to_string(size()));
  const Shape s(input.shape().begin() + 1, input.shape().end());
  const std::size_t n = numel(s);
  Tensor out(s);
  auto d = out.mutable_data();
  const auto rv = rows.data();
  const auto xv = input.data();
  for (std::size_t i = 0; i < n; ++i) d[i] = rv[r * n + i] * xv[i];
  return out;
}

double LinearMap::reconstruct(std::size_t r) const {
  const Tensor c = contributions(r);
  double total = 0.0;
  for (double v : c.data()) total += v;
  return total;
}

double LinearMap::completeness_error(std::size_t r) const {
  return std::abs(outputs.at(r) - reconstruct(r)) / (std::abs(outputs.at(r)) + 1e-8);
}

namespace {

// Operations that are linear in an argument as long as the other arguments do
// not depend on the input.
const std::set<std::string> kLinearOps = {"conv2d", "reshape", "concat", "select", "sum", "mul_scalar",
                                          "maxout", "max_over_axis", "mul", "div", "add", "sub", "kronecker"};

}  // namespace

void check_dynamic_linear(const Tensor& output, const Tensor& input) {
  // Post-order walk; `dependent` holds every tensor that reaches the input.
  std::unordered_set<const TensorImpl*> dependent{input.id()};
  std::unordered_set<const TensorImpl*> seen{output.id()};
  std::vector<const Tensor*> order;
  struct Frame {
    const Tensor* t;
    std::size_t next;
  };
  std::vector<Frame> stack{{&output, 0}};
  while (!stack.empty()) {
    auto& top = stack.back();
    const auto& fn = top.t->grad_fn();
    if (fn && top.next < fn->inputs.size()) {
      const Tensor& in = fn->inputs[top.next++];
      if (in.defined() && seen.insert(in.id()).second) stack.push_back({&in, 0});
      continue;
    }
    order.push_back(top.t);
    stack.pop_back();
  }
  for (const Tensor* t : order) {
    const auto& fn = t->grad_fn();
    if (!fn) continue;
    std::vector<bool> dep;
    for (const auto& in : fn->inputs) dep.push_back(in.defined() && dependent.count(in.id()) > 0);
    const auto n_dep = std::count(dep.begin(), dep.end(), true);
    if (n_dep == 0) continue;
    dependent.insert(t->id());
    const std::string& op = fn->op;
    if (!kLinearOps.count(op)) throw NotDynamicLinearError(op);
    if ((op == "mul" || op == "conv2d" || op == "kronecker") && n_dep != 1) throw NotDynamicLinearError(op);
    if (op == "div" && dep[1]) throw NotDynamicLinearError(op);
    // x + c is affine, not linear.
    if ((op == "add" || op == "sub") && n_dep != 2) throw NotDynamicLinearError(op);
  }
}

LinearMap collapse(const std::function<Tensor(const Tensor&)>& fn, const Tensor& x,
                   const std::vector<std::size_t>& flat_indices, const std::vector<std::string>& names) {
  if (x.dim() != 4 || x.extent(0) != 1) throw ShapeError("collapse expects one sample [1,C,H,W], got " + to_string(x.shape()));
  Tensor leaf = detach(x).clone().set_requires_grad(true);
  Tensor out = fn(leaf);
  check_dynamic_linear(out, leaf);
  LinearMap map;
  map.input = detach(x).clone();
  Shape rows_shape{flat_indices.size()};
  rows_shape.insert(rows_shape.end(), x.shape().begin() + 1, x.shape().end());
  std::vector<double> rows;
  rows.reserve(numel(rows_shape));
  for (std::size_t r = 0; r < flat_indices.size(); ++r) {
    const Tensor unit = select(out, flat_indices[r]);
    map.outputs.push_back(unit.item());
    map.targets.push_back(r < names.size() ? names[r] : "output " + std::to_string(flat_indices[r]));
    const Tensor g = grad(unit, {leaf})[0];
    rows.insert(rows.end(), g.data().begin(), g.data().end());
  }
  map.rows = Tensor(std::move(rows_shape), std::move(rows));
  return map;
}

LinearMap collapse_rows(const Model& model, const Tensor& x, const std::vector<std::size_t>& classes) {
  const std::size_t K = model.config().num_classes;
  std::vector<std::string> names;
  for (std::size_t k : classes) {
    if (k >= K) throw std::out_of_range("class " + std::to_string(k) + " out of range [0, " + std::to_string(K) + ")");
    names.push_back("class " + std::to_string(k));
  }
  return collapse([&](const Tensor& in) { return model.forward(in, Dynamics::frozen); }, x, classes, names);
}

Shape layer_shape(const Model& model, std::size_t layer, std::size_t h, std::size_t w) {
  const std::size_t L = model.num_layers();
  if (layer < 1 || layer > L) {
    throw std::out_of_range("layer " + std::to_string(layer) + " out of range [1, " + std::to_string(L) + "]");
  }
  const auto& cfg = model.config();
  std::size_t c = cfg.input_channels;
  for (std::size_t k = 0; k < model.stages().size(); ++k) {
    const auto g = model.stages()[k].geometry();
    h = g.out_h(h);
    w = g.out_w(w);
    if (layer == k + 1) return {model.stages()[k].out_channels(), h, w};
    c = cfg.dense_connectivity && cfg.stage_strides[k] == 1 ? c + cfg.stage_widths[k] : cfg.stage_widths[k];
  }
  if (layer == L - 1) return {cfg.num_classes, h, w};
  return {cfg.num_classes, 1, 1};
}

ContributionMap contribution_map(const Model& model, const Tensor& x, const NeuronRef& neuron) {
  if (x.dim() != 4 || x.extent(0) != 1) throw ShapeError("expected one sample [1,C,H,W], got " + to_string(x.shape()));
  const Shape s = layer_shape(model, neuron.layer, x.extent(2), x.extent(3));
  auto check = [](std::size_t v, std::size_t n, const char* what) {
    if (v >= n) {
      throw std::out_of_range(std::string(what) + " " + std::to_string(v) + " out of range [0, " + std::to_string(n) +
                              ")");
    }
  };
  check(neuron.channel, s[0], "neuron");
  check(neuron.y, s[1], "row");
  check(neuron.x, s[2], "column");
  const std::size_t flat = (neuron.channel * s[1] + neuron.y) * s[2] + neuron.x;
  const std::size_t l = neuron.layer;
  ContributionMap cm;
  cm.neuron = neuron;
  cm.row = collapse([&](const Tensor& in) { return model.trace(in, Dynamics::frozen).layers[l - 1]; }, x, {flat},
                    {"layer " + std::to_string(l) + " neuron " + std::to_string(neuron.channel) + " at (" +
                     std::to_string(neuron.y) + "," + std::to_string(neuron.x) + ")"});
  cm.activation = cm.row.outputs[0];
  cm.contributions = cm.row.contributions(0);
  cm.pixel_map = sum(cm.contributions, {0}, false);
  return cm;
}

std::vector<Activation> top_activating(const Model& model, const DatasetManifest& manifest, std::size_t layer,
                                       std::size_t channel, std::size_t k) {
  const std::size_t size = manifest.image_size();
  const Shape s = layer_shape(model, layer, size, size);
  if (channel >= s[0]) {
    throw std::out_of_range("neuron " + std::to_string(channel) + " out of range [0, " + std::to_string(s[0]) + ")");
  }
  NoGradGuard no_grad;
  std::vector<Activation> all;
  const std::size_t C = model.config().input_channels;
  constexpr std::size_t kBatch = 16;
  const auto& test = manifest.test;
  for (std::size_t b = 0; b < test.size(); b += kBatch) {
    const std::vector<std::size_t> idx(test.begin() + static_cast<std::ptrdiff_t>(b),
                                       test.begin() + static_cast<std::ptrdiff_t>(std::min(test.size(), b + kBatch)));
    const Tensor out = model.trace(encode_samples(manifest, idx, C)).layers[layer - 1];
    const auto v = out.data();
    const std::size_t plane = s[1] * s[2];
    for (std::size_t j = 0; j < idx.size(); ++j) {
      const double* p = v.data() + (j * s[0] + channel) * plane;
      const std::size_t best = static_cast<std::size_t>(std::max_element(p, p + plane) - p);
      all.push_back({idx[j], best / s[2], best % s[2], p[best]});
    }
  }
  std::stable_sort(all.begin(), all.end(), [](const Activation& a, const Activation& b) {
    if (a.value != b.value) return a.value > b.value;
    return a.sample < b.sample;
  });
  if (all.size() > k) all.resize(k);
  return all;
}

double percentile_of(std::vector<double> values, double percentile) {
  if (values.empty()) return 0.0;
  std::sort(values.begin(), values.end());
  const double pos = std::clamp(percentile, 0.0, 100.0) / 100.0 * static_cast<double>(values.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const std::size_t hi = std::min(lo + 1, values.size() - 1);
  return values[lo] + (pos - static_cast<double>(lo)) * (values[hi] - values[lo]);
}

ExplanationImage decode_color(const Tensor& row, double percentile) {
  if (row.dim() != 3 || (row.extent(0) != 6 && row.extent(0) != 8)) {
    throw ShapeError("decode_color expects a [6,H,W] or [8,H,W] row, got " + to_string(row.shape()));
  }
  const std::size_t h = row.extent(1), w = row.extent(2), plane = h * w;
  const auto r = row.data();
  ExplanationImage img;
  img.percentile = percentile;
  img.rgb = Tensor({3, h, w});
  img.alpha = Tensor({h, w});
  auto rgb = img.rgb.mutable_data();
  std::vector<double> norm(plane, 0.0);
  for (std::size_t i = 0; i < plane; ++i) {
    for (std::size_t c = 0; c < 3; ++c) {
      const double p = std::max(r[c * plane + i], 0.0);
      const double q = std::max(r[(c + 3) * plane + i], 0.0);
      rgb[c * plane + i] = p + q > 0.0 ? p / (p + q) : 0.5;
    }
    double sq = 0.0;
    for (std::size_t c = 0; c < 6; ++c) sq += r[c * plane + i] * r[c * plane + i];
    norm[i] = std::sqrt(sq);
  }
  const double cut = percentile_of(norm, percentile);
  auto a = img.alpha.mutable_data();
  for (std::size_t i = 0; i < plane; ++i) a[i] = cut > 0.0 ? std::clamp(norm[i] / cut, 0.0, 1.0) : 0.0;
  return img;
}

Rgba8 to_rgba(const ExplanationImage& image) {
  const std::size_t h = image.alpha.extent(0), w = image.alpha.extent(1), plane = h * w;
  Rgba8 out{w, h, std::vector<std::uint8_t>(plane * 4)};
  const auto rgb = image.rgb.data();
  const auto a = image.alpha.data();
  for (std::size_t i = 0; i < plane; ++i) {
    for (std::size_t c = 0; c < 3; ++c) out.pixels[i * 4 + c] = to_byte(rgb[c * plane + i]);
    out.pixels[i * 4 + 3] = to_byte(a[i]);
  }
  return out;
}

void render_png(const ExplanationImage& image, const std::filesystem::path& path) { write_png(path, to_rgba(image)); }

void write_sidecar(const std::filesystem::path& path, std::size_t cls, double logit, double completeness_error,
                   double percentile) {
  nlohmann::json j;
  j["class"] = cls;
  j["logit"] = logit;
  j["completeness_error"] = completeness_error;
  j["percentile"] = percentile;
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << j.dump(2) << '\n';
}

}  // namespace hxb
