#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>

#include <json.hpp>

#include "hxbcos/ops.hpp"
#include "hxbcos/train.hpp"
#include "oracles.hpp"

using namespace hxb;
namespace fs = std::filesystem;

namespace {

std::vector<double> vec(std::span<const double> s) { return {s.begin(), s.end()}; }

// Reference BCE written directly from the probability form.
double bce_oracle(const std::vector<double>& z, const std::vector<double>& y) {
  double acc = 0;
  for (std::size_t i = 0; i < z.size(); ++i) {
    const double p = 1.0 / (1.0 + std::exp(-z[i]));
    acc += -(y[i] * std::log(p) + (1 - y[i]) * std::log(1 - p));
  }
  return acc / z.size();
}

ModelConfig tiny_model(Variant v = Variant::ph) {
  ModelConfig c = ModelConfig::desk(v, 3);
  c.stage_widths = {12, 12};
  c.stage_strides = {2, 2};
  c.image_size = 32;
  c.seed = 1;
  return c;
}

TrainConfig tiny_train() {
  TrainConfig t = TrainConfig::desk();
  t.total_epochs = 2;
  t.warmup_epochs = 1;
  t.batch_size = 8;
  t.image_size = 32;
  t.seed = 3;
  return t;
}

fs::path temp_dir(const std::string& name) {
  auto d = fs::temp_directory_path() / ("hxb_train_" + name);
  fs::remove_all(d);
  return d;
}

}  // namespace

TEST(Bce, Examples) {
  Tensor y = one_hot({1, 0}, 3);
  EXPECT_EQ(vec(y.data()), (std::vector<double>{0, 1, 0, 1, 0, 0}));
  EXPECT_NEAR(bce_loss(Tensor({2, 3}), y).item(), std::log(2.0), 1e-15);
  Tensor sat({2, 3}, {-20, 20, -20, 20, -20, -20});
  EXPECT_LT(bce_loss(sat, y).item(), 1e-6);
  Tensor big({1, 2}, {800, -800});
  EXPECT_TRUE(std::isfinite(bce_loss(big, one_hot({1}, 2)).item()));
}

TEST(Bce, MatchesOracleAndFiniteDifferences) {
  std::mt19937_64 rng(1);
  const auto z0 = oracle::random_vec(12, rng, -4, 4);
  Tensor y = one_hot({0, 3, 2}, 4);
  const auto yv = vec(y.data());
  EXPECT_NEAR(bce_loss(Tensor({3, 4}, z0), y).item(), bce_oracle(z0, yv), 1e-12);
  Tensor z = Tensor({3, 4}, z0).set_requires_grad(true);
  bce_loss(z, y).backward();
  auto f = [&](const oracle::Vec& p) { return bce_oracle(p, yv); };
  EXPECT_LE(oracle::max_relative_error(vec(z.grad()), oracle::finite_difference(f, z0)), 1e-3);
}

TEST(OneHot, RowsSumToOne) {
  Tensor y = one_hot({3, 1, 0, 2}, 4);
  for (std::size_t r = 0; r < 4; ++r) {
    double s = 0;
    for (std::size_t k = 0; k < 4; ++k) s += y.at({r, k});
    EXPECT_EQ(s, 1.0);
  }
  EXPECT_THROW(one_hot({4}, 4), std::invalid_argument);
}

TEST(Schedule, Examples) {
  TrainConfig c = TrainConfig::desk();
  EXPECT_EQ(lr_at(0, c), 0.0);
  EXPECT_DOUBLE_EQ(lr_at(c.warmup_epochs, c), c.lr_max);
  EXPECT_NEAR(lr_at(c.total_epochs, c), 0.0, 1e-18);
  EXPECT_NEAR(lr_at((c.warmup_epochs + c.total_epochs) / 2.0, c), c.lr_max / 2, 1e-15);
  EXPECT_NEAR(lr_at(c.warmup_epochs - 1e-9, c), c.lr_max, 1e-12);
  EXPECT_NEAR(lr_at(c.warmup_epochs + 1e-9, c), c.lr_max, 1e-12);
  EXPECT_DOUBLE_EQ(lr_at(5, c), c.lr_max / 2);
}

TEST(Config, PresetsAndValidation) {
  TrainConfig p = TrainConfig::preset("paper");
  EXPECT_EQ(p.lr_max, 1e-5);
  EXPECT_EQ(p.total_epochs, 200u);
  EXPECT_EQ(p.batch_size, 128u);
  EXPECT_EQ(TrainConfig::preset("desk").lr_max, 1e-3);
  EXPECT_THROW(TrainConfig::preset("huge"), std::invalid_argument);
  TrainConfig bad = TrainConfig::desk();
  bad.warmup_epochs = 40;
  EXPECT_THROW(bad.validate(), std::invalid_argument);
  bad = TrainConfig::desk();
  bad.batch_size = 0;
  EXPECT_THROW(bad.validate(), std::invalid_argument);
}

TEST(Adam, ZeroGradientLeavesParameters) {
  std::vector<NamedTensor> params{{"w", Tensor({3}, {0.5, -1.0, 2.0}).set_requires_grad(true)}};
  AdamState s;
  TrainConfig c = TrainConfig::desk();
  for (int i = 0; i < 5; ++i) {
    sum(mul(params[0].second, 0.0)).backward();
    adam_step(params, s, 1e-2, c);
    params[0].second.zero_grad();
  }
  EXPECT_EQ(vec(params[0].second.data()), (std::vector<double>{0.5, -1.0, 2.0}));
  EXPECT_EQ(s.step, 5u);
  ASSERT_EQ(s.m.size(), 1u);
  EXPECT_EQ(s.m[0].size(), 3u);
}

TEST(Adam, FirstStepMovesByLearningRate) {
  std::vector<NamedTensor> params{{"w", Tensor({1}, {1.0}).set_requires_grad(true)}};
  AdamState s;
  sum(mul(params[0].second, 3.0)).backward();
  adam_step(params, s, 0.01, TrainConfig::desk());
  EXPECT_NEAR(params[0].second.item(), 0.99, 1e-6);
}

TEST(Adam, DecreasesQuadratic) {
  std::vector<NamedTensor> params{{"x", Tensor({1}, {1.0}).set_requires_grad(true)}};
  AdamState s;
  double prev = 1.0;
  for (int i = 0; i < 10; ++i) {
    Tensor& x = params[0].second;
    x.zero_grad();
    sum(mul(x, x)).backward();
    adam_step(params, s, 0.05, TrainConfig::desk());
    const double f = x.item() * x.item();
    EXPECT_LT(f, prev);
    prev = f;
  }
}

TEST(Train, SmokeRunWritesArtifacts) {
  auto m = synth_shapes(8, 32, 2);
  split_manifest(m, 0.25, 2);
  Model model(tiny_model());
  const auto dir = temp_dir("smoke");
  TrainConfig cfg = tiny_train();
  cfg.metadata["data.source"] = "synth";
  std::vector<EpochMetrics> seen;
  TrainState st = train(model, m, cfg, dir, [&](const EpochMetrics& e) { seen.push_back(e); });
  ASSERT_EQ(st.history.size(), 2u);
  EXPECT_EQ(seen.size(), 2u);
  for (const auto& e : st.history) {
    EXPECT_TRUE(std::isfinite(e.train_loss));
    EXPECT_TRUE(std::isfinite(e.test_loss));
  }
  EXPECT_LT(st.history.back().train_loss, st.history.front().train_loss);
  EXPECT_TRUE(fs::exists(dir / "best.hxb"));
  EXPECT_TRUE(fs::exists(dir / "last.hxb"));
  auto ck = load_checkpoint(dir / "last.hxb");
  EXPECT_EQ(ck.metadata.at("data.source"), "synth");
  EXPECT_EQ(ck.metadata.at("train.epoch"), "1");

  std::ifstream in(dir / "metrics.jsonl");
  std::string line;
  std::size_t records = 0;
  while (std::getline(in, line)) {
    auto j = nlohmann::json::parse(line);
    for (const char* k : {"epoch", "split", "loss", "accuracy", "lr"}) EXPECT_TRUE(j.contains(k)) << line;
    ++records;
  }
  EXPECT_EQ(records, 4u);
  fs::remove_all(dir);
}

TEST(Train, DeterministicFirstEpoch) {
  auto m = synth_shapes(4, 32, 5);
  split_manifest(m, 0.25, 5);
  TrainConfig cfg = tiny_train();
  cfg.total_epochs = 2;
  double first[2];
  for (int r = 0; r < 2; ++r) {
    Model model(tiny_model());
    const auto dir = temp_dir("det" + std::to_string(r));
    double loss = -1;
    try {
      train(model, m, cfg, dir, [&](const EpochMetrics& e) {
        loss = e.train_loss;
        throw std::runtime_error("stop");
      });
    } catch (const std::runtime_error&) {
    }
    first[r] = loss;
    fs::remove_all(dir);
  }
  EXPECT_GT(first[0], 0.0);
  EXPECT_EQ(first[0], first[1]);
}

TEST(Train, RejectsIncompatibleData) {
  auto m = synth_shapes(2, 32, 0);
  split_manifest(m, 0.5, 0);
  Model q(tiny_model(Variant::quaternion));
  TrainConfig cfg = tiny_train();
  cfg.data_channels = 6;
  EXPECT_THROW(train(q, m, cfg, temp_dir("q")), std::invalid_argument);
  ModelConfig five = tiny_model();
  five.num_classes = 5;
  Model m5(five);
  EXPECT_THROW(train(m5, m, tiny_train(), temp_dir("k")), std::invalid_argument);
}
