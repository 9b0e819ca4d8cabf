#include "hxbcos/train.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>
#include <stdexcept>

#include <json.hpp>

#include "hxbcos/eval.hpp"
#include "hxbcos/ops.hpp"

namespace hxb {

TrainConfig TrainConfig::desk() { return TrainConfig{}; }

TrainConfig TrainConfig::paper() {
  TrainConfig c;
  c.lr_max = 1e-5;
  c.total_epochs = 200;
  c.batch_size = 128;
  c.image_size = 224;
  return c;
}

TrainConfig TrainConfig::preset(const std::string& name) {
  if (name == "desk") return desk();
  if (name == "paper") return paper();
  throw std::invalid_argument("unknown preset '" + name + "' (expected desk or paper)");
}

void TrainConfig::validate() const {
  if (!(lr_max > 0)) throw std::invalid_argument("lr_max must be positive");
  if (total_epochs == 0) throw std::invalid_argument("total_epochs must be positive");
  if (!(warmup_epochs >= 0) || warmup_epochs >= static_cast<double>(total_epochs)) {
    throw std::invalid_argument("warmup_epochs must be in [0, total_epochs)");
  }
  if (batch_size == 0) throw std::invalid_argument("batch_size must be positive");
  if (!(beta1 >= 0 && beta1 < 1 && beta2 >= 0 && beta2 < 1)) throw std::invalid_argument("Adam betas must be in [0,1)");
  if (!(adam_eps > 0)) throw std::invalid_argument("Adam epsilon must be positive");
}

double lr_at(double epoch, const TrainConfig& c) {
  const double total = static_cast<double>(c.total_epochs);
  const double e = std::clamp(epoch, 0.0, total);
  if (e < c.warmup_epochs) return c.lr_max * e / c.warmup_epochs;
  return c.lr_max * 0.5 * (1.0 + std::cos(std::numbers::pi * (e - c.warmup_epochs) / (total - c.warmup_epochs)));
}

Tensor one_hot(const std::vector<std::size_t>& labels, std::size_t num_classes) {
  Tensor t({labels.size(), num_classes});
  auto d = t.mutable_data();
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] >= num_classes) throw std::invalid_argument("label " + std::to_string(labels[i]) + " out of range");
    d[i * num_classes + labels[i]] = 1.0;
  }
  return t;
}

Tensor bce_loss(const Tensor& logits, const Tensor& targets) {
  if (logits.shape() != targets.shape() || logits.dim() != 2) {
    throw ShapeError("bce_loss expects matching [N,K] operands, got " + to_string(logits.shape()) + " and " +
                     to_string(targets.shape()));
  }
  const auto z = logits.data();
  const auto y = targets.data();
  const double inv = 1.0 / static_cast<double>(z.size());
  double total = 0.0;
  for (std::size_t i = 0; i < z.size(); ++i) {
    total += std::max(z[i], 0.0) - z[i] * y[i] + std::log1p(std::exp(-std::abs(z[i])));
  }
  std::vector<double> zs(z.begin(), z.end()), ys(y.begin(), y.end());
  return Tensor::make_result(
      {1}, {total * inv}, "bce_loss", {logits, targets},
      [zs = std::move(zs), ys = std::move(ys), inv](std::span<const double> g, std::span<std::vector<double>* const> gin) {
        if (gin[0]) {
          auto& gz = *gin[0];
          for (std::size_t i = 0; i < zs.size(); ++i) {
            const double s = zs[i] >= 0 ? 1.0 / (1.0 + std::exp(-zs[i])) : std::exp(zs[i]) / (1.0 + std::exp(zs[i]));
            gz[i] += g[0] * inv * (s - ys[i]);
          }
        }
        if (gin[1]) {
          auto& gy = *gin[1];
          for (std::size_t i = 0; i < zs.size(); ++i) gy[i] -= g[0] * inv * zs[i];
        }
      });
}

void adam_step(std::vector<NamedTensor>& params, AdamState& state, double lr, const TrainConfig& c) {
  if (state.m.empty()) {
    for (const auto& [name, p] : params) {
      state.m.emplace_back(p.numel(), 0.0);
      state.v.emplace_back(p.numel(), 0.0);
    }
  }
  if (state.m.size() != params.size()) throw std::invalid_argument("Adam state does not match parameter list");
  ++state.step;
  const double t = static_cast<double>(state.step);
  const double bc1 = 1.0 - std::pow(c.beta1, t);
  const double bc2 = 1.0 - std::pow(c.beta2, t);
  for (std::size_t k = 0; k < params.size(); ++k) {
    Tensor& p = params[k].second;
    auto& m = state.m[k];
    auto& v = state.v[k];
    if (m.size() != p.numel()) throw std::invalid_argument("Adam moments for '" + params[k].first + "' mis-sized");
    const auto g = p.grad();
    auto w = p.mutable_data();
    for (std::size_t i = 0; i < w.size(); ++i) {
      const double gi = g.empty() ? 0.0 : g[i];
      m[i] = c.beta1 * m[i] + (1.0 - c.beta1) * gi;
      v[i] = c.beta2 * v[i] + (1.0 - c.beta2) * gi * gi;
      const double step = lr * (m[i] / bc1) / (std::sqrt(v[i] / bc2) + c.adam_eps);
      w[i] = round_to_f32(w[i] - step);
    }
  }
}

namespace {

Tensor augmented_batch(const DatasetManifest& m, const std::vector<std::size_t>& idx, const TrainConfig& c,
                       std::size_t epoch) {
  std::vector<Tensor> images;
  images.reserve(idx.size());
  for (std::size_t i : idx) {
    const Sample& s = m.samples[i];
    if (c.augment) {
      Rng rng = sample_rng(c.seed, i, epoch + 1);
      images.push_back(encode_input(augment(s, rng, c.image_size).image, c.data_channels));
    } else {
      images.push_back(encode_input(s.image, c.data_channels));
    }
  }
  return stack(images);
}

void write_record(std::ofstream& out, std::size_t epoch, const char* split, double loss, double acc, double lr) {
  nlohmann::json j;
  j["epoch"] = epoch;
  j["split"] = split;
  j["loss"] = loss;
  j["accuracy"] = acc;
  j["lr"] = lr;
  out << j.dump() << '\n';
  out.flush();
}

}  // namespace

TrainState train(Model& model, const DatasetManifest& manifest, const TrainConfig& config,
                 const std::filesystem::path& out_dir, const EpochCallback& on_epoch) {
  config.validate();
  if (config.data_channels != model.config().input_channels) {
    throw std::invalid_argument("model takes " + std::to_string(model.config().input_channels) +
                                " input channels but the data pipeline encodes " +
                                std::to_string(config.data_channels));
  }
  if (manifest.num_classes() != model.config().num_classes) {
    throw std::invalid_argument("dataset has " + std::to_string(manifest.num_classes()) + " classes, model has " +
                                std::to_string(model.config().num_classes));
  }
  if (manifest.train.empty()) throw std::invalid_argument("training split is empty");

  std::filesystem::create_directories(out_dir);
  std::ofstream metrics(out_dir / "metrics.jsonl", std::ios::trunc);
  if (!metrics) throw std::runtime_error("cannot write " + (out_dir / "metrics.jsonl").string());

  auto params = model.parameters();
  for (auto& [name, p] : params) p.set_requires_grad(true);

  TrainState state;
  const std::size_t n_train = manifest.train.size();
  const std::size_t steps_per_epoch = (n_train + config.batch_size - 1) / config.batch_size;
  const std::size_t K = model.config().num_classes;
  Metadata meta_base = config.metadata;
  meta_base["train.seed"] = std::to_string(config.seed);

  for (std::size_t epoch = 0; epoch < config.total_epochs; ++epoch) {
    std::vector<std::size_t> order = manifest.train;
    Rng shuffle_rng = sample_rng(config.seed, ~std::uint64_t{0}, epoch);
    std::shuffle(order.begin(), order.end(), shuffle_rng);

    double loss_sum = 0.0;
    std::size_t correct = 0;
    double lr = 0.0;
    for (std::size_t step = 0; step < steps_per_epoch; ++step) {
      const auto first = order.begin() + static_cast<std::ptrdiff_t>(step * config.batch_size);
      const auto last = order.begin() + static_cast<std::ptrdiff_t>(std::min(n_train, (step + 1) * config.batch_size));
      const std::vector<std::size_t> idx(first, last);
      std::vector<std::size_t> labels;
      for (std::size_t i : idx) labels.push_back(manifest.samples[i].label);

      const Tensor x = augmented_batch(manifest, idx, config, epoch);
      const Tensor logits = model.forward(x);
      const Tensor loss = bce_loss(logits, one_hot(labels, K));
      const double lv = loss.item();
      if (!std::isfinite(lv)) {
        throw std::runtime_error("non-finite loss at epoch " + std::to_string(epoch) + " step " +
                                 std::to_string(step) + "; last good checkpoint kept in " + out_dir.string());
      }
      for (auto& [name, p] : params) p.zero_grad();
      loss.backward();
      lr = lr_at(static_cast<double>(epoch) + static_cast<double>(step) / static_cast<double>(steps_per_epoch), config);
      adam_step(params, state.adam, lr, config);

      loss_sum += lv * static_cast<double>(idx.size());
      const auto pred = argmax_rows(logits);
      for (std::size_t i = 0; i < idx.size(); ++i) correct += pred[i] == labels[i];
    }
    for (auto& [name, p] : params) p.zero_grad();

    EpochMetrics em;
    em.epoch = epoch;
    em.lr = lr;
    em.train_loss = loss_sum / static_cast<double>(n_train);
    em.train_accuracy = static_cast<double>(correct) / static_cast<double>(n_train);
    if (!manifest.test.empty()) {
      const Tensor logits = predict_logits(model, manifest, manifest.test, config.batch_size);
      std::vector<std::size_t> labels;
      for (std::size_t i : manifest.test) labels.push_back(manifest.samples[i].label);
      NoGradGuard guard;
      em.test_loss = bce_loss(logits, one_hot(labels, K)).item();
      em.test_accuracy = accuracy_from_logits(logits, labels);
    }
    write_record(metrics, epoch, "train", em.train_loss, em.train_accuracy, em.lr);
    if (!manifest.test.empty()) write_record(metrics, epoch, "test", em.test_loss, em.test_accuracy, em.lr);
    state.history.push_back(em);

    Metadata meta = meta_base;
    meta["train.epoch"] = std::to_string(epoch);
    meta["train.test_accuracy"] = std::to_string(em.test_accuracy);
    if (em.test_accuracy > state.best_accuracy) {
      state.best_accuracy = em.test_accuracy;
      state.best_epoch = epoch;
      save_checkpoint(out_dir / "best.hxb", model, meta);
    }
    save_checkpoint(out_dir / "last.hxb", model, meta);
    if (on_epoch) on_epoch(em);
  }
  return state;
}

}  // namespace hxb
