#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "hxbcos/data.hpp"
#include "hxbcos/model.hpp"

namespace hxb {

struct TrainConfig {
  double lr_max = 1e-3;
  double warmup_epochs = 10;
  std::size_t total_epochs = 40;
  std::size_t batch_size = 32;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  std::uint64_t seed = 0;
  /// Channels the RGB data is encoded to; must equal the model's input channels.
  std::size_t data_channels = 6;
  std::size_t image_size = 64;
  bool augment = true;
  /// Extra key=value entries stored in every checkpoint.
  Metadata metadata;

  /// Desk-scale recipe: lr 1e-3, 40 epochs, batch 32, 64x64.
  static TrainConfig desk();
  /// Full-scale recipe: lr 1e-5, 200 epochs, batch 128, 224x224.
  static TrainConfig paper();
  static TrainConfig preset(const std::string& name);
  void validate() const;
};

/// Linear warmup from 0 to lr_max, then cosine decay to 0 at total_epochs.
/// `epoch` may be fractional.
double lr_at(double epoch, const TrainConfig& config);

/// [N] labels -> [N,K] one-hot rows.
Tensor one_hot(const std::vector<std::size_t>& labels, std::size_t num_classes);

/// Mean binary cross entropy of sigmoid(logits) against targets, over N*K
/// entries, in the stable form max(z,0) - z*y + log(1 + exp(-|z|)).
Tensor bce_loss(const Tensor& logits, const Tensor& targets);

/// Bias-corrected Adam moments for a fixed parameter list.
struct AdamState {
  std::size_t step = 0;
  std::vector<std::vector<double>> m;
  std::vector<std::vector<double>> v;
};

/// One Adam update from the gradients accumulated on `params`. Parameters
/// without a gradient are treated as having a zero gradient. Updated values
/// are rounded to binary32.
void adam_step(std::vector<NamedTensor>& params, AdamState& state, double lr, const TrainConfig& config);

struct EpochMetrics {
  std::size_t epoch = 0;
  double train_loss = 0;
  double train_accuracy = 0;
  double test_loss = 0;
  double test_accuracy = 0;
  double lr = 0;
};

struct TrainState {
  AdamState adam;
  std::vector<EpochMetrics> history;
  double best_accuracy = -1;
  std::size_t best_epoch = 0;
};

using EpochCallback = std::function<void(const EpochMetrics&)>;

/// Trains `model` in place on manifest.train and evaluates on manifest.test
/// after every epoch. Writes `metrics.jsonl`, `best.hxb` (highest test
/// accuracy) and `last.hxb` into out_dir. A non-finite loss aborts with
/// std::runtime_error, leaving the last good checkpoint on disk.
TrainState train(Model& model, const DatasetManifest& manifest, const TrainConfig& config,
                 const std::filesystem::path& out_dir, const EpochCallback& on_epoch = {});

}  // namespace hxb
