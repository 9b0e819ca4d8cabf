#pragma once

#include <filesystem>
#include <functional>
#include <stdexcept>
#include <string>
#include <vector>

#include "hxbcos/data.hpp"
#include "hxbcos/image_io.hpp"
#include "hxbcos/model.hpp"

namespace hxb {

/// Raised when an explanation is requested through an operation that is not
/// dynamic-linear in the input. The message names the operation.
class NotDynamicLinearError : public std::invalid_argument {
 public:
  explicit NotDynamicLinearError(const std::string& op);
  const std::string& op() const { return op_; }

 private:
  std::string op_;
};

/// Rows of the input-dependent linear map that reproduces selected outputs.
struct LinearMap {
  Tensor rows;                       ///< [R, C, H, W]
  std::vector<std::string> targets;  ///< one descriptor per row
  std::vector<double> outputs;       ///< forward value of each target
  Tensor input;                      ///< [1, C, H, W]

  std::size_t size() const { return outputs.size(); }
  /// rows[r] as [C,H,W].
  Tensor row(std::size_t r) const;
  /// rows[r] (.) input, [C,H,W].
  Tensor contributions(std::size_t r) const;
  /// sum(rows[r] (.) input)
  double reconstruct(std::size_t r) const;
  /// |output - reconstruct| / (|output| + 1e-8)
  double completeness_error(std::size_t r) const;
};

/// Throws NotDynamicLinearError unless every operation on a path from `input`
/// to `output` is linear in the input once detached factors are held fixed.
void check_dynamic_linear(const Tensor& output, const Tensor& input);

/// Generic collapse: evaluates fn(x) with x as a differentiable leaf, checks
/// dynamic linearity, and returns d fn(x)[i] / dx for every flat index i.
LinearMap collapse(const std::function<Tensor(const Tensor&)>& fn, const Tensor& x,
                   const std::vector<std::size_t>& flat_indices, const std::vector<std::string>& names = {});

/// Explanation rows of the given classes for one sample x [1,C,H,W], with all
/// |cos|^(B-1) factors and MaxOut selections frozen at their forward values.
LinearMap collapse_rows(const Model& model, const Tensor& x, const std::vector<std::size_t>& classes);

/// Location of one neuron: 1-based layer, channel, spatial position.
struct NeuronRef {
  std::size_t layer = 1;
  std::size_t channel = 0;
  std::size_t y = 0;
  std::size_t x = 0;
};

/// Output shape [C,H,W] of a 1-based layer for inputs of size h x w.
Shape layer_shape(const Model& model, std::size_t layer, std::size_t h, std::size_t w);

struct ContributionMap {
  NeuronRef neuron;
  double activation = 0;
  Tensor contributions;  ///< [C,H,W], partial-collapse row times input
  Tensor pixel_map;      ///< [H,W], channel sum of contributions
  LinearMap row;
};

/// Contributions of the input to one neuron. Throws std::out_of_range naming
/// the valid range on bad coordinates.
ContributionMap contribution_map(const Model& model, const Tensor& x, const NeuronRef& neuron);

struct Activation {
  std::size_t sample = 0;  ///< manifest index
  std::size_t y = 0, x = 0;
  double value = 0;
};

/// For each test sample, the location where channel `channel` of `layer`
/// peaks (first in row-major order on ties); the k largest, ties broken by
/// sample index.
std::vector<Activation> top_activating(const Model& model, const DatasetManifest& manifest, std::size_t layer,
                                       std::size_t channel, std::size_t k);

struct ExplanationImage {
  Tensor rgb;    ///< [3,H,W] in [0,1]
  Tensor alpha;  ///< [H,W] in [0,1]
  double percentile = 99.9;
};

/// Linear-interpolated percentile (0..100) of the values.
double percentile_of(std::vector<double> values, double percentile);

/// Colour from the positive parts p of a 6- or 8-channel row [C,H,W]:
/// rgb_c = p_c / (p_c + p_{c+3}) (0.5 when both vanish); alpha is the per-pixel
/// L2 norm over the six colour channels divided by its `percentile`, clipped.
ExplanationImage decode_color(const Tensor& row, double percentile = 99.9);

Rgba8 to_rgba(const ExplanationImage& image);
void render_png(const ExplanationImage& image, const std::filesystem::path& path);

/// {"class", "logit", "completeness_error", "percentile"}
void write_sidecar(const std::filesystem::path& path, std::size_t cls, double logit, double completeness_error,
                   double percentile);

}  // namespace hxb
