#pragma once

#include <variant>
#include <vector>

#include "hxbcos/conv.hpp"
#include "hxbcos/hypercomplex.hpp"

namespace hxb {

/// How the input-dependent scaling |cos|^(B-1) is differentiated.
enum class Dynamics {
  live,    ///< differentiated through (training)
  frozen,  ///< held constant at its forward value (explanations)
};

/// Ordinary real-valued convolution weight [Cout,Cin,kh,kw].
struct DenseWeight {
  Tensor weight;
  static DenseWeight create(std::size_t cout, std::size_t cin, std::size_t kh, std::size_t kw, Rng& rng);
};

using WeightSource = std::variant<DenseWeight, PhWeightSpec>;

struct BcosOptions {
  double b_exp = 2.0;
  std::size_t stride = 1;
  std::size_t padding = 1;
  std::size_t maxout_units = 2;
  double epsilon = 1e-12;
};

/// Each output-channel slice divided by max(||slice||, epsilon).
Tensor row_normalize(const Tensor& weight, double epsilon = 1e-12);

/// Max over groups of `units` consecutive channels: [N, U*C, H, W] -> [N, C, H, W].
/// Ties go to the first unit of the group.
Tensor maxout(const Tensor& h, std::size_t units);

class BcosConv;

/// The input-dependent linear operator of one B-cos layer at a given input:
/// row (c, y, x) is the normalized weight row c, placed at the patch (y, x) and
/// scaled by the frozen factor |cos|^(B-1) observed there.
struct DynamicMatrix {
  Tensor weight_hat;  ///< [Cout,Cin,kh,kw], unit rows
  Tensor scale;       ///< [N,Cout,H',W'], detached
  ConvGeometry geometry;
  Shape input_shape;

  /// conv2d(h, weight_hat) * scale. Reproduces the layer output on the input it
  /// was extracted from; linear in h.
  Tensor apply(const Tensor& h) const;
  /// Dense row-major [Cout*H'*W', Cin*H*W] matrix for one sample. Only sensible
  /// for small inputs.
  std::vector<double> materialize(std::size_t sample = 0) const;
  std::size_t rows() const { return numel(scale.shape()) / scale.extent(0); }
  std::size_t cols() const { return numel(input_shape) / input_shape[0]; }
};

/// Bias-free B-cos convolution: (W^ * h) . |cos(h, W^)|^(B-1), optionally
/// followed by MaxOut over groups of units.
class BcosConv {
 public:
  BcosConv(WeightSource weight, BcosOptions options);

  const BcosOptions& options() const { return options_; }
  const WeightSource& weight_source() const { return weight_; }
  bool is_hypercomplex() const { return std::holds_alternative<PhWeightSpec>(weight_); }
  /// Linear units per layer (before MaxOut).
  std::size_t units() const;
  /// Channels after MaxOut.
  std::size_t out_channels() const { return units() / options_.maxout_units; }
  std::size_t in_channels() const;
  ConvGeometry geometry() const;

  /// Assembled weight before normalization.
  Tensor weight() const;
  Tensor normalized_weight() const;

  /// The B-cos transform, before MaxOut: [N,Cin,H,W] -> [N,units,H',W'].
  Tensor transform(const Tensor& h, Dynamics dynamics = Dynamics::live) const;
  /// transform followed by MaxOut.
  Tensor forward(const Tensor& h, Dynamics dynamics = Dynamics::live) const;
  DynamicMatrix dynamic_matrix(const Tensor& h) const;

  ParamCount param_count() const;
  std::vector<NamedTensor> parameters(const std::string& prefix) const;

 private:
  Tensor scaling(const Tensor& s, const Tensor& h) const;

  WeightSource weight_;
  BcosOptions options_;
};

/// Free-function form of BcosConv::transform with live dynamics.
inline Tensor bcos_forward(const BcosConv& layer, const Tensor& h) { return layer.transform(h); }

}  // namespace hxb
