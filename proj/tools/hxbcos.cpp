#include <CLI11.hpp>
#include <json.hpp>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include "hxbcos/eval.hpp"
#include "hxbcos/explain.hpp"
#include "hxbcos/image_io.hpp"
#include "hxbcos/parallel.hpp"
#include "hxbcos/train.hpp"

namespace fs = std::filesystem;
using namespace hxb;

namespace {

/// How the dataset is built; stored in checkpoints so later commands can
/// rebuild the same split.
struct DataOptions {
  std::string data = "synth";
  std::string index;
  std::size_t num_per_class = 200;
  std::size_t image_size = 64;
  double test_fraction = 0.2;
  std::uint64_t seed = 0;

  Metadata to_metadata() const {
    return {{"data.source", data},
            {"data.index", index},
            {"data.num_per_class", std::to_string(num_per_class)},
            {"data.image_size", std::to_string(image_size)},
            {"data.test_fraction", std::to_string(test_fraction)},
            {"data.seed", std::to_string(seed)}};
  }
};

void add_data_flags(CLI::App* cmd, DataOptions& d) {
  cmd->add_option("--data", d.data, "Dataset: 'synth' or a folder with one subdirectory per class");
  cmd->add_option("--index", d.index, "Index file of 'path<TAB>class' lines, relative to --data");
  cmd->add_option("--num-per-class", d.num_per_class, "Synthetic images per class");
  cmd->add_option("--image-size", d.image_size, "Image resolution");
  cmd->add_option("--test-fraction", d.test_fraction, "Fraction of each class held out for testing");
}

DatasetManifest load_data(const DataOptions& d) {
  DatasetManifest m;
  if (d.data == "synth") {
    m = synth_shapes(d.num_per_class, d.image_size, d.seed);
  } else if (!d.index.empty()) {
    m = load_index(d.data, d.index, d.image_size);
  } else {
    m = load_image_folder(d.data, d.image_size);
  }
  for (const auto& w : m.warnings) std::cerr << "warning: " << w << '\n';
  split_manifest(m, d.test_fraction, d.seed);
  return m;
}

/// Flags not given on the command line fall back to what the checkpoint
/// recorded at training time.
void restore_data(DataOptions& d, const Metadata& meta, const CLI::App* cmd) {
  auto get = [&](const char* key) -> std::optional<std::string> {
    auto it = meta.find(key);
    if (it == meta.end()) return std::nullopt;
    return it->second;
  };
  if (cmd->count("--data") == 0) {
    if (auto v = get("data.source")) d.data = *v;
    if (auto v = get("data.index"); v && cmd->count("--index") == 0) d.index = *v;
  }
  if (auto v = get("data.num_per_class"); v && cmd->count("--num-per-class") == 0) d.num_per_class = std::stoul(*v);
  if (auto v = get("data.image_size"); v && cmd->count("--image-size") == 0) d.image_size = std::stoul(*v);
  if (auto v = get("data.test_fraction"); v && cmd->count("--test-fraction") == 0) d.test_fraction = std::stod(*v);
  if (auto v = get("data.seed"); v && cmd->count("--seed") == 0) d.seed = std::stoull(*v);
}

Tensor as_batch(const Tensor& encoded) {
  return encoded.reshape({1, encoded.extent(0), encoded.extent(1), encoded.extent(2)});
}

// Opaque input on the left, decoded explanation (with its alpha) on the right.
Rgba8 side_by_side(const Tensor& rgb, const ExplanationImage& expl) {
  const std::size_t h = rgb.extent(1), w = rgb.extent(2);
  const Rgba8 right = to_rgba(expl);
  Rgba8 out{2 * w, h, std::vector<std::uint8_t>(2 * w * h * 4, 0)};
  const auto d = rgb.data();
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x) {
      std::uint8_t* left = &out.pixels[(y * 2 * w + x) * 4];
      for (std::size_t c = 0; c < 3; ++c) left[c] = to_byte(d[(c * h + y) * w + x]);
      left[3] = 255;
      std::copy_n(&right.pixels[(y * w + x) * 4], 4, &out.pixels[(y * 2 * w + w + x) * 4]);
    }
  return out;
}

struct TrainFlags {
  DataOptions data;
  std::string variant = "ph";
  std::size_t n = 3;
  double b_exp = 2.0;
  std::string preset = "desk";
  std::string out = "runs/train";
  std::optional<std::size_t> epochs;
  std::optional<std::size_t> batch_size;
  std::optional<double> lr;
  std::optional<double> logit_scale;
  bool dense = false;
  bool no_augment = false;
};

int cmd_train(TrainFlags& f, const CLI::App* cmd) {
  TrainConfig tc = TrainConfig::preset(f.preset);
  if (cmd->count("--image-size") == 0) f.data.image_size = tc.image_size;
  tc.image_size = f.data.image_size;
  tc.seed = f.data.seed;
  if (f.epochs) tc.total_epochs = *f.epochs;
  if (f.batch_size) tc.batch_size = *f.batch_size;
  if (f.lr) tc.lr_max = *f.lr;
  if (tc.warmup_epochs >= static_cast<double>(tc.total_epochs)) tc.warmup_epochs = 0.25 * static_cast<double>(tc.total_epochs);
  tc.augment = !f.no_augment;

  ModelConfig mc = ModelConfig::desk(parse_variant(f.variant), f.n);
  mc.b_exp = f.b_exp;
  mc.dense_connectivity = f.dense;
  mc.logit_scale = f.logit_scale.value_or(mc.layer_gain());
  mc.image_size = tc.image_size;
  mc.seed = f.data.seed;
  tc.data_channels = mc.input_channels;
  tc.metadata = f.data.to_metadata();
  tc.metadata["train.preset"] = f.preset;

  DatasetManifest m = load_data(f.data);
  mc.num_classes = m.num_classes();
  Model model(mc);
  fs::create_directories(f.out);
  write_index(m, fs::path(f.out) / "index.tsv");
  std::cout << "model " << to_string(mc.variant) << " n=" << mc.algebra_dim() << " params=" << model.param_count().total()
            << " input_channels=" << mc.input_channels << " train=" << m.train.size() << " test=" << m.test.size()
            << std::endl;
  const TrainState st = train(model, m, tc, f.out, [](const EpochMetrics& e) {
    std::cout << "epoch " << e.epoch << " loss " << e.train_loss << " train_acc " << e.train_accuracy << " test_acc "
              << e.test_accuracy << " lr " << e.lr << std::endl;
  });
  std::cout << "best test accuracy " << st.best_accuracy << " at epoch " << st.best_epoch << "; checkpoint "
            << (fs::path(f.out) / "best.hxb").string() << std::endl;
  return 0;
}

struct ExplainFlags {
  DataOptions data;
  std::string checkpoint;
  std::string image;
  std::optional<std::size_t> index;
  std::string cls;
  std::string out = "runs/explain";
  double percentile = 99.9;
  std::optional<std::size_t> channels;
};

int cmd_explain(ExplainFlags& f, const CLI::App* cmd) {
  Checkpoint ck = load_checkpoint(f.checkpoint);
  const Model& model = ck.model;
  const std::size_t C = model.config().input_channels;
  if (f.channels && *f.channels != C) {
    throw std::invalid_argument("checkpoint expects " + std::to_string(C) + "-channel input, requested encoding has " +
                                std::to_string(*f.channels));
  }
  Tensor rgb;
  std::string stem;
  if (!f.image.empty()) {
    rgb = resize_center_crop(read_image(f.image), model.config().image_size);
    stem = fs::path(f.image).stem().string();
  } else {
    restore_data(f.data, ck.metadata, cmd);
    const DatasetManifest m = load_data(f.data);
    const std::size_t pos = f.index.value_or(0);
    if (pos >= m.test.size()) {
      throw std::out_of_range("--index " + std::to_string(pos) + " out of range [0, " + std::to_string(m.test.size()) + ")");
    }
    rgb = m.samples[m.test[pos]].image;
    stem = "test" + std::to_string(pos);
  }
  const Tensor x = as_batch(encode_input(rgb, C));
  std::vector<std::size_t> classes;
  const std::size_t K = model.config().num_classes;
  if (f.cls == "all") {
    for (std::size_t k = 0; k < K; ++k) classes.push_back(k);
  } else if (f.cls.empty()) {
    NoGradGuard g;
    classes.push_back(argmax_rows(model.forward(x))[0]);
  } else {
    classes.push_back(std::stoul(f.cls));
  }
  const LinearMap lm = collapse_rows(model, x, classes);
  fs::create_directories(f.out);
  for (std::size_t r = 0; r < classes.size(); ++r) {
    const ExplanationImage img = decode_color(lm.row(r), f.percentile);
    const std::string base = stem + "_class" + std::to_string(classes[r]);
    render_png(img, fs::path(f.out) / (base + ".png"));
    write_sidecar(fs::path(f.out) / (base + ".json"), classes[r], lm.outputs[r], lm.completeness_error(r), f.percentile);
    std::cout << "class " << classes[r] << " logit " << lm.outputs[r] << " completeness_error "
              << lm.completeness_error(r) << " -> " << (fs::path(f.out) / (base + ".png")).string() << '\n';
  }
  return 0;
}

struct NeuronFlags {
  DataOptions data;
  std::string checkpoint;
  std::size_t layer = 1;
  std::size_t neuron = 0;
  std::size_t top_k = 3;
  std::string out = "runs/neurons";
  double percentile = 99.9;
};

int cmd_neurons(NeuronFlags& f, const CLI::App* cmd) {
  Checkpoint ck = load_checkpoint(f.checkpoint);
  const Model& model = ck.model;
  restore_data(f.data, ck.metadata, cmd);
  const DatasetManifest m = load_data(f.data);
  const auto top = top_activating(model, m, f.layer, f.neuron, f.top_k);
  fs::create_directories(f.out);
  nlohmann::json listing = nlohmann::json::array();
  for (std::size_t r = 0; r < top.size(); ++r) {
    const auto& a = top[r];
    const Tensor& rgb = m.samples[a.sample].image;
    const Tensor x = as_batch(encode_input(rgb, model.config().input_channels));
    const ContributionMap cm = contribution_map(model, x, {f.layer, f.neuron, a.y, a.x});
    const ExplanationImage img = decode_color(cm.row.row(0), f.percentile);
    const std::string name = "layer" + std::to_string(f.layer) + "_neuron" + std::to_string(f.neuron) + "_rank" +
                             std::to_string(r) + ".png";
    write_png(fs::path(f.out) / name, side_by_side(rgb, img));
    listing.push_back({{"rank", r},
                       {"sample", m.samples[a.sample].id},
                       {"y", a.y},
                       {"x", a.x},
                       {"activation", a.value},
                       {"contribution_sum", cm.row.reconstruct(0)},
                       {"panel", name}});
    std::cout << name << " sample " << m.samples[a.sample].id << " activation " << a.value << '\n';
  }
  std::ofstream(fs::path(f.out) / "neurons.json") << listing.dump(2) << '\n';
  return 0;
}

struct PointingFlags {
  DataOptions data;
  std::string checkpoint;
  std::string method = "all";
  std::size_t num_grids = 100;
  std::size_t panels = 0;
  std::string out = "runs/pointing";
  double percentile = 99.9;
};

int cmd_pointing(PointingFlags& f, const CLI::App* cmd) {
  Checkpoint ck = load_checkpoint(f.checkpoint);
  const Model& model = ck.model;
  restore_data(f.data, ck.metadata, cmd);
  const DatasetManifest m = load_data(f.data);
  const auto grids = build_grids(model, m, f.num_grids, f.data.seed);
  std::vector<AttributionMethod> methods;
  if (f.method == "all") {
    methods = {AttributionMethod::inherent, AttributionMethod::gradcam, AttributionMethod::uniform};
  } else {
    methods = {parse_method(f.method)};
  }
  fs::create_directories(f.out);
  for (auto method : methods) {
    const GridGameReport rep = pointing_game(model, m, grids, method);
    std::ofstream(fs::path(f.out) / ("pointing_" + to_string(method) + ".json")) << report_json(rep) << '\n';
    std::cout << "method " << to_string(method) << " grids " << rep.num_grids() << " localization_accuracy "
              << rep.localization_accuracy << " fallbacks " << rep.num_fallbacks << '\n';
  }
  for (std::size_t g = 0; g < std::min(f.panels, grids.size()); ++g) {
    const Tensor img = compose_grid(m, grids[g]);
    const Tensor x = as_batch(encode_input(img, model.config().input_channels));
    const std::vector<std::size_t> classes(grids[g].classes.begin(), grids[g].classes.end());
    const LinearMap lm = collapse_rows(model, x, classes);
    for (std::size_t q = 0; q < 4; ++q) {
      write_png(fs::path(f.out) / ("grid" + std::to_string(g) + "_quadrant" + std::to_string(q) + ".png"),
                side_by_side(img, decode_color(lm.row(q), f.percentile)));
    }
  }
  return 0;
}

struct EvalFlags {
  DataOptions data;
  std::string checkpoint;
};

int cmd_eval(EvalFlags& f, const CLI::App* cmd) {
  Checkpoint ck = load_checkpoint(f.checkpoint);
  restore_data(f.data, ck.metadata, cmd);
  const DatasetManifest m = load_data(f.data);
  std::cout << "test accuracy " << accuracy(ck.model, m) << " on " << m.test.size() << " samples\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Hypercomplex B-cos networks: training, explanations and localization evaluation"};
  app.require_subcommand(1);
  int threads = 0;
  app.add_option("--threads", threads, "Worker threads (default: all cores, capped by HX_THREADS)");

  TrainFlags tf;
  auto* train_cmd = app.add_subcommand("train", "Train a model and write checkpoints and metrics.jsonl");
  add_data_flags(train_cmd, tf.data);
  train_cmd->add_option("--seed", tf.data.seed, "Seed for data, split, initialization and augmentation");
  train_cmd->add_option("--variant", tf.variant, "real, ph or quaternion")->check(CLI::IsMember({"real", "ph", "quaternion"}));
  train_cmd->add_option("--n", tf.n, "Algebra dimension of the ph variant");
  train_cmd->add_option("--b-exp", tf.b_exp, "B-cos exponent B");
  train_cmd->add_option("--preset", tf.preset, "desk or paper")->check(CLI::IsMember({"desk", "paper"}));
  train_cmd->add_option("--out", tf.out, "Output directory");
  train_cmd->add_option("--epochs", tf.epochs, "Override the preset's epoch count");
  train_cmd->add_option("--batch-size", tf.batch_size, "Override the preset's batch size");
  train_cmd->add_option("--lr", tf.lr, "Override the preset's peak learning rate");
  train_cmd->add_option("--logit-scale", tf.logit_scale, "Constant class-map gain (default: the architecture's layer gain)");
  train_cmd->add_flag("--dense", tf.dense, "Concatenate stage inputs to outputs on stride-1 stages");
  train_cmd->add_flag("--no-augment", tf.no_augment, "Disable random crop and flip");

  ExplainFlags ef;
  auto* explain_cmd = app.add_subcommand("explain", "Write explanation PNGs and completeness sidecars");
  add_data_flags(explain_cmd, ef.data);
  explain_cmd->add_option("--seed", ef.data.seed, "Dataset seed (defaults to the checkpoint's)");
  explain_cmd->add_option("--checkpoint", ef.checkpoint, "Checkpoint file")->required();
  explain_cmd->add_option("--image", ef.image, "PNG or PPM image to explain");
  explain_cmd->add_option("--test-index", ef.index, "Position in the test split to explain (when no --image)");
  explain_cmd->add_option("--class", ef.cls, "Class index, 'all', or empty for the predicted class");
  explain_cmd->add_option("--out", ef.out, "Output directory");
  explain_cmd->add_option("--percentile", ef.percentile, "Alpha normalization percentile");
  explain_cmd->add_option("--channels", ef.channels, "Expected input encoding (6 or 8)");

  NeuronFlags nf;
  auto* neurons_cmd = app.add_subcommand("neurons", "Top activating test images of one neuron with contribution maps");
  add_data_flags(neurons_cmd, nf.data);
  neurons_cmd->add_option("--seed", nf.data.seed, "Dataset seed (defaults to the checkpoint's)");
  neurons_cmd->add_option("--checkpoint", nf.checkpoint, "Checkpoint file")->required();
  neurons_cmd->add_option("--layer", nf.layer, "1-based layer index");
  neurons_cmd->add_option("--neuron", nf.neuron, "Channel within the layer");
  neurons_cmd->add_option("--top-k", nf.top_k, "Number of panels");
  neurons_cmd->add_option("--out", nf.out, "Output directory");
  neurons_cmd->add_option("--percentile", nf.percentile, "Alpha normalization percentile");

  PointingFlags pf;
  auto* pointing_cmd = app.add_subcommand("pointing", "Grid pointing game");
  add_data_flags(pointing_cmd, pf.data);
  pointing_cmd->add_option("--seed", pf.data.seed, "Dataset and grid seed (defaults to the checkpoint's)");
  pointing_cmd->add_option("--checkpoint", pf.checkpoint, "Checkpoint file")->required();
  pointing_cmd->add_option("--method", pf.method, "inherent, gradcam, uniform or all")
      ->check(CLI::IsMember({"inherent", "gradcam", "uniform", "all"}));
  pointing_cmd->add_option("--num-grids", pf.num_grids, "Number of 2x2 grids");
  pointing_cmd->add_option("--panels", pf.panels, "Write explanation panels for the first N grids");
  pointing_cmd->add_option("--out", pf.out, "Output directory");
  pointing_cmd->add_option("--percentile", pf.percentile, "Alpha normalization percentile for panels");

  EvalFlags vf;
  auto* eval_cmd = app.add_subcommand("eval", "Test-split accuracy of a checkpoint");
  add_data_flags(eval_cmd, vf.data);
  eval_cmd->add_option("--seed", vf.data.seed, "Dataset seed (defaults to the checkpoint's)");
  eval_cmd->add_option("--checkpoint", vf.checkpoint, "Checkpoint file")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::Success& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 1;
  }

  try {
    if (threads > 0) set_worker_threads(threads);
    if (*train_cmd) return cmd_train(tf, train_cmd);
    if (*explain_cmd) return cmd_explain(ef, explain_cmd);
    if (*neurons_cmd) return cmd_neurons(nf, neurons_cmd);
    if (*pointing_cmd) return cmd_pointing(pf, pointing_cmd);
    if (*eval_cmd) return cmd_eval(vf, eval_cmd);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  }
  return 1;
}
