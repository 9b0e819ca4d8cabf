#include "hxbcos/eval.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

#include <json.hpp>

#include "hxbcos/explain.hpp"
#include "hxbcos/ops.hpp"

namespace hxb {

Tensor predict_logits(const Model& model, const DatasetManifest& manifest, const std::vector<std::size_t>& indices,
                      std::size_t batch_size) {
  if (indices.empty()) throw std::invalid_argument("predict_logits needs at least one sample");
  NoGradGuard no_grad;
  std::vector<Tensor> parts;
  for (std::size_t b = 0; b < indices.size(); b += batch_size) {
    const std::vector<std::size_t> idx(
        indices.begin() + static_cast<std::ptrdiff_t>(b),
        indices.begin() + static_cast<std::ptrdiff_t>(std::min(indices.size(), b + batch_size)));
    parts.push_back(model.forward(encode_samples(manifest, idx, model.config().input_channels)));
  }
  return parts.size() == 1 ? parts.front() : concat(parts, 0);
}

std::vector<std::size_t> argmax_rows(const Tensor& logits) {
  if (logits.dim() != 2) throw ShapeError("argmax_rows expects [N,K], got " + to_string(logits.shape()));
  const std::size_t n = logits.extent(0), k = logits.extent(1);
  const auto v = logits.data();
  std::vector<std::size_t> out(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double* row = v.data() + i * k;
    out[i] = static_cast<std::size_t>(std::max_element(row, row + k) - row);
  }
  return out;
}

double accuracy_from_logits(const Tensor& logits, const std::vector<std::size_t>& labels) {
  const auto pred = argmax_rows(logits);
  if (pred.size() != labels.size()) throw std::invalid_argument("label count does not match logits");
  if (pred.empty()) return 0.0;
  std::size_t correct = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) correct += pred[i] == labels[i];
  return static_cast<double>(correct) / static_cast<double>(pred.size());
}

double accuracy(const Model& model, const DatasetManifest& manifest) {
  std::vector<std::size_t> labels;
  for (std::size_t i : manifest.test) labels.push_back(manifest.samples[i].label);
  return accuracy_from_logits(predict_logits(model, manifest, manifest.test), labels);
}

std::vector<Grid> build_grids(const Model& model, const DatasetManifest& manifest, std::size_t num_grids,
                              std::uint64_t seed) {
  const std::size_t K = manifest.num_classes();
  // Correctly classified test images per class, most confident first.
  std::vector<std::vector<std::pair<double, std::size_t>>> ranked(K);
  if (!manifest.test.empty()) {
    const Tensor logits = predict_logits(model, manifest, manifest.test);
    const auto pred = argmax_rows(logits);
    const auto lv = logits.data();
    for (std::size_t j = 0; j < manifest.test.size(); ++j) {
      const std::size_t i = manifest.test[j];
      const std::size_t label = manifest.samples[i].label;
      if (pred[j] == label) ranked[label].emplace_back(lv[j * K + label], i);
    }
  }
  std::vector<std::size_t> eligible;
  std::string counts;
  for (std::size_t c = 0; c < K; ++c) {
    std::stable_sort(ranked[c].begin(), ranked[c].end(),
                     [](const auto& a, const auto& b) { return a.first > b.first || (a.first == b.first && a.second < b.second); });
    if (!ranked[c].empty()) eligible.push_back(c);
    counts += (c ? ", " : "") + manifest.class_names[c] + "=" + std::to_string(ranked[c].size());
  }
  if (eligible.size() < 4) {
    throw std::runtime_error("grids need 4 classes with correctly classified test images; eligible counts: " + counts);
  }

  Rng rng(seed);
  std::vector<std::size_t> cursor(K, 0);
  std::vector<Grid> grids(num_grids);
  for (auto& g : grids) {
    std::vector<std::size_t> classes = eligible;
    std::shuffle(classes.begin(), classes.end(), rng);
    for (std::size_t q = 0; q < 4; ++q) {
      const std::size_t c = classes[q];
      g.classes[q] = c;
      g.samples[q] = ranked[c][cursor[c]++ % ranked[c].size()].second;
    }
  }
  return grids;
}

Tensor compose_grid(const DatasetManifest& manifest, const Grid& grid) {
  const Tensor& first = manifest.samples.at(grid.samples[0]).image;
  const std::size_t h = first.extent(1), w = first.extent(2);
  Tensor out({3, 2 * h, 2 * w});
  auto d = out.mutable_data();
  for (std::size_t q = 0; q < 4; ++q) {
    const Tensor& im = manifest.samples.at(grid.samples[q]).image;
    if (im.shape() != first.shape()) throw ShapeError("grid tiles differ in shape");
    const std::size_t oy = (q / 2) * h, ox = (q % 2) * w;
    const auto s = im.data();
    for (std::size_t c = 0; c < 3; ++c)
      for (std::size_t y = 0; y < h; ++y)
        for (std::size_t x = 0; x < w; ++x) d[(c * 2 * h + oy + y) * 2 * w + ox + x] = s[(c * h + y) * w + x];
  }
  return out;
}

namespace {

Tensor cam_from(const Tensor& features, const Tensor& gradient, std::size_t out_h, std::size_t out_w) {
  const std::size_t c = features.extent(1), h = features.extent(2), w = features.extent(3), plane = h * w;
  const auto a = features.data();
  const auto g = gradient.data();
  Tensor cam({1, h, w});
  auto m = cam.mutable_data();
  for (std::size_t ch = 0; ch < c; ++ch) {
    double alpha = 0.0;
    for (std::size_t i = 0; i < plane; ++i) alpha += g[ch * plane + i];
    alpha /= static_cast<double>(plane);
    for (std::size_t i = 0; i < plane; ++i) m[i] += alpha * a[ch * plane + i];
  }
  for (auto& v : m) v = std::max(v, 0.0);
  return resize_bilinear(cam, out_h, out_w).reshape({out_h, out_w});
}

// Attribution maps [H,W] for several classes of one input.
std::vector<Tensor> attribution_maps(const Model& model, const Tensor& x, const std::vector<std::size_t>& classes,
                                     AttributionMethod method) {
  const std::size_t h = x.extent(2), w = x.extent(3);
  std::vector<Tensor> maps;
  switch (method) {
    case AttributionMethod::inherent: {
      const LinearMap lm = collapse_rows(model, x, classes);
      for (std::size_t r = 0; r < classes.size(); ++r) {
        NoGradGuard no_grad;
        maps.push_back(sum(lm.contributions(r), {0}, false));
      }
      break;
    }
    case AttributionMethod::gradcam: {
      const ForwardTrace t = model.trace(x);
      for (std::size_t k : classes) {
        const Tensor g = grad(select(t.logits, k), {t.features})[0];
        maps.push_back(cam_from(t.features, g, h, w));
      }
      break;
    }
    case AttributionMethod::uniform:
      for (std::size_t i = 0; i < classes.size(); ++i) maps.push_back(Tensor::ones({h, w}));
      break;
  }
  return maps;
}

}  // namespace

Tensor grad_cam(const Model& model, const Tensor& x, std::size_t target_class) {
  if (x.dim() != 4 || x.extent(0) != 1) throw ShapeError("grad_cam expects [1,C,H,W], got " + to_string(x.shape()));
  return attribution_maps(model, x, {target_class}, AttributionMethod::gradcam)[0];
}

std::string to_string(AttributionMethod m) {
  switch (m) {
    case AttributionMethod::inherent:
      return "inherent";
    case AttributionMethod::gradcam:
      return "gradcam";
    case AttributionMethod::uniform:
      return "uniform";
  }
  return "?";
}

AttributionMethod parse_method(const std::string& s) {
  if (s == "inherent") return AttributionMethod::inherent;
  if (s == "gradcam") return AttributionMethod::gradcam;
  if (s == "uniform") return AttributionMethod::uniform;
  throw std::invalid_argument("unknown method '" + s + "' (expected inherent, gradcam or uniform)");
}

Tensor attribution_map(const Model& model, const Tensor& x, std::size_t target_class, AttributionMethod method) {
  if (x.dim() != 4 || x.extent(0) != 1) throw ShapeError("expected one sample [1,C,H,W], got " + to_string(x.shape()));
  return attribution_maps(model, x, {target_class}, method)[0];
}

std::optional<double> quadrant_share(const Tensor& map, std::size_t quadrant) {
  if (map.dim() != 2) throw ShapeError("quadrant_share expects [H,W], got " + to_string(map.shape()));
  if (quadrant >= 4) throw std::out_of_range("quadrant must be in [0,4)");
  const std::size_t h = map.extent(0), w = map.extent(1);
  const auto v = map.data();
  double inside = 0.0, total = 0.0;
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x) {
      const double p = std::max(v[y * w + x], 0.0);
      total += p;
      if ((y >= h / 2) == (quadrant / 2 == 1) && (x >= w / 2) == (quadrant % 2 == 1)) inside += p;
    }
  if (!(total > 0.0)) return std::nullopt;
  return inside / total;
}

GridGameReport pointing_game(const Model& model, const DatasetManifest& manifest, const std::vector<Grid>& grids,
                             AttributionMethod method) {
  GridGameReport report;
  report.method = method;
  double total = 0.0;
  for (std::size_t gi = 0; gi < grids.size(); ++gi) {
    const Grid& g = grids[gi];
    const Tensor img = compose_grid(manifest, g);
    const Tensor x = encode_input(img, model.config().input_channels).reshape(
        {1, model.config().input_channels, img.extent(1), img.extent(2)});
    const std::vector<std::size_t> classes(g.classes.begin(), g.classes.end());
    const auto maps = attribution_maps(model, x, classes, method);
    GridScore score;
    score.grid = gi;
    for (std::size_t q = 0; q < 4; ++q) {
      const auto share = quadrant_share(maps[q], q);
      score.fallback[q] = !share.has_value();
      score.fractions[q] = share.value_or(0.25);
      report.num_fallbacks += score.fallback[q];
      total += score.fractions[q];
    }
    report.per_grid.push_back(score);
  }
  report.localization_accuracy = grids.empty() ? 0.0 : total / static_cast<double>(4 * grids.size());
  return report;
}

std::string report_json(const GridGameReport& report) {
  nlohmann::json j;
  j["method"] = to_string(report.method);
  j["num_grids"] = report.num_grids();
  j["grid_size"] = report.grid_size;
  j["localization_accuracy"] = report.localization_accuracy;
  j["num_fallbacks"] = report.num_fallbacks;
  j["per_grid"] = nlohmann::json::array();
  for (const auto& s : report.per_grid) {
    j["per_grid"].push_back({{"grid", s.grid}, {"fractions", s.fractions}, {"fallback", s.fallback}});
  }
  return j.dump(2);
}

}  // namespace hxb
