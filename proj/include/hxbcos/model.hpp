#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "hxbcos/bcos.hpp"

namespace hxb {

enum class Variant { real, ph, quaternion };

std::string to_string(Variant v);
Variant parse_variant(const std::string& s);

/// Architecture of a fully convolutional B-cos network.
///
/// Stage k is a 3x3 B-cos convolution with `stage_widths[k]` output channels
/// (after MaxOut) and stride `stage_strides[k]`. With dense connectivity a
/// stride-1 stage emits concat(input, conv(input)). The classifier is a 1x1
/// real-valued B-cos convolution followed by global average pooling.
struct ModelConfig {
  Variant variant = Variant::ph;
  std::size_t n = 3;
  double b_exp = 2.0;
  std::size_t maxout_units = 2;
  std::vector<std::size_t> stage_widths{24, 48, 48, 96, 96, 96};
  std::vector<std::size_t> stage_strides{1, 2, 1, 2, 1, 1};
  bool dense_connectivity = false;
  std::size_t input_channels = 6;
  std::size_t num_classes = 4;
  std::size_t image_size = 64;
  std::uint64_t seed = 0;
  /// Positive constant multiplying the class maps. Every stage is positively
  /// homogeneous, so this equals a per-layer gain and keeps the network
  /// dynamic-linear.
  double logit_scale = 1.0;

  /// Desk architecture for a variant. Quaternion models, and PH models whose n
  /// does not divide 6, take the 8-channel padded encoding. logit_scale is set
  /// to layer_gain().
  static ModelConfig desk(Variant variant, std::size_t n = 3);

  /// Product over all layers of 100 / sqrt(kh * kw * Cin).
  double layer_gain() const;

  /// Dimension of the algebra: 1 (real), n (ph) or 4 (quaternion).
  std::size_t algebra_dim() const;
  /// Throws std::invalid_argument naming the offending stage.
  void validate() const;

  std::map<std::string, std::string> to_entries() const;
  static ModelConfig from_entries(const std::map<std::string, std::string>& entries);
};

/// Outputs of every layer of one forward pass. `layers[l-1]` is layer l:
/// the B-cos stages, then the classifier's class maps, then the pooled logits
/// as [N,K,1,1].
struct ForwardTrace {
  std::vector<Tensor> layers;
  Tensor features;  ///< classifier input (last pre-pooling feature map)
  Tensor logits;    ///< [N,K]
};

class Model {
 public:
  explicit Model(ModelConfig config);

  const ModelConfig& config() const { return config_; }
  const std::vector<BcosConv>& stages() const { return stages_; }
  const BcosConv& head() const { return head_; }
  /// Number of addressable layers (stages + class maps + logits).
  std::size_t num_layers() const { return stages_.size() + 2; }

  /// x: [N, input_channels, H, W] -> logits [N, num_classes].
  Tensor forward(const Tensor& x, Dynamics dynamics = Dynamics::live) const;
  ForwardTrace trace(const Tensor& x, Dynamics dynamics = Dynamics::live) const;

  std::vector<NamedTensor> parameters() const;
  std::vector<std::pair<std::string, ParamCount>> param_breakdown() const;
  ParamCount param_count() const;
  /// Sum over the convolution stages only (the classifier head excluded).
  ParamCount stage_param_count() const;

 private:
  void check_input(const Tensor& x) const;
  BcosConv build_layers();

  ModelConfig config_;
  std::vector<BcosConv> stages_;
  BcosConv head_;
};

using Metadata = std::map<std::string, std::string>;

struct Checkpoint {
  Model model;
  Metadata metadata;
};

/// Binary checkpoint: "HXB1", u16 version, u32-length-prefixed key=value text
/// (model config plus metadata), then one record per parameter: u32 name
/// length, name bytes, u32 rank, u32 extents, little-endian binary32 values.
void save_checkpoint(const std::filesystem::path& path, const Model& model, const Metadata& metadata = {});
std::vector<std::uint8_t> serialize_checkpoint(const Model& model, const Metadata& metadata = {});
Checkpoint load_checkpoint(const std::filesystem::path& path);
Checkpoint deserialize_checkpoint(const std::vector<std::uint8_t>& bytes);

}  // namespace hxb
