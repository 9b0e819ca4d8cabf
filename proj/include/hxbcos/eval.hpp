#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "hxbcos/data.hpp"
#include "hxbcos/model.hpp"

namespace hxb {

/// Logits [N,K] for the given samples, computed in batches without gradients.
Tensor predict_logits(const Model& model, const DatasetManifest& manifest, const std::vector<std::size_t>& indices,
                      std::size_t batch_size = 32);

/// Row-wise argmax; ties go to the lowest index.
std::vector<std::size_t> argmax_rows(const Tensor& logits);
double accuracy_from_logits(const Tensor& logits, const std::vector<std::size_t>& labels);
/// Fraction of manifest.test classified correctly.
double accuracy(const Model& model, const DatasetManifest& manifest);

/// A 2x2 arrangement of test images of distinct classes.
struct Grid {
  std::array<std::size_t, 4> samples{};  ///< manifest indices, row-major quadrants
  std::array<std::size_t, 4> classes{};
};

/// Test images that the model classifies correctly, ranked by the sigmoid
/// confidence of their class, feed `num_grids` grids of four distinct classes.
/// Each class contributes its most confident images; the order within a grid
/// is shuffled with `seed`. Throws if fewer than four classes qualify.
std::vector<Grid> build_grids(const Model& model, const DatasetManifest& manifest, std::size_t num_grids,
                              std::uint64_t seed);

/// Tiles the four RGB images into one [3, 2H, 2W] image.
Tensor compose_grid(const DatasetManifest& manifest, const Grid& grid);

/// Grad-CAM at the classifier input: ReLU(sum_c mean(dy_k/dA_c) * A_c),
/// bilinearly upsampled to the input resolution. x: [1,C,H,W] -> [H,W].
Tensor grad_cam(const Model& model, const Tensor& x, std::size_t target_class);

enum class AttributionMethod { inherent, gradcam, uniform };
std::string to_string(AttributionMethod m);
AttributionMethod parse_method(const std::string& s);

/// Per-pixel attribution map [H,W] of class k on the encoded input x [1,C,H,W].
Tensor attribution_map(const Model& model, const Tensor& x, std::size_t target_class, AttributionMethod method);

/// Positive mass inside quadrant q of an [H,W] map divided by the total
/// positive mass. Returns nullopt when there is no positive mass.
std::optional<double> quadrant_share(const Tensor& map, std::size_t quadrant);

struct GridScore {
  std::size_t grid = 0;
  std::array<double, 4> fractions{};
  std::array<bool, 4> fallback{};  ///< entry had no positive attribution; scored 0.25
};

struct GridGameReport {
  AttributionMethod method = AttributionMethod::inherent;
  std::size_t grid_size = 2;
  std::vector<GridScore> per_grid;
  double localization_accuracy = 0;  ///< mean over all entries
  std::size_t num_fallbacks = 0;

  std::size_t num_grids() const { return per_grid.size(); }
};

GridGameReport pointing_game(const Model& model, const DatasetManifest& manifest, const std::vector<Grid>& grids,
                             AttributionMethod method);

/// {"method", "num_grids", "localization_accuracy", "per_grid": [...]}
std::string report_json(const GridGameReport& report);

}  // namespace hxb
