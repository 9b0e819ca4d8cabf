#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "hxbcos/tensor.hpp"

namespace hxb {

/// Pixel rectangle [x0, x1) x [y0, y1).
struct BoundingBox {
  std::size_t x0 = 0, y0 = 0, x1 = 0, y1 = 0;
};

struct Sample {
  Tensor image;  ///< RGB [3,H,W] in [0,1], before encoding
  std::size_t label = 0;
  std::string id;  ///< relative path, or a synthetic identifier
  std::optional<BoundingBox> box;
};

struct DatasetManifest {
  std::filesystem::path root;  ///< empty for synthetic data
  std::vector<std::string> class_names;
  std::vector<Sample> samples;
  std::vector<std::size_t> train;  ///< indices into samples
  std::vector<std::size_t> test;
  std::uint64_t split_seed = 0;
  std::vector<std::string> warnings;  ///< files skipped while loading

  std::size_t num_classes() const { return class_names.size(); }
  std::size_t image_size() const;
};

/// [r,g,b] -> [r,g,b,1-r,1-g,1-b]. Rejects values outside [0,1].
Tensor encode_six_channel(const Tensor& rgb);
/// Appends two all-zero channels to a 6-channel encoding.
Tensor pad_quaternion(const Tensor& six);
/// Encodes RGB for a model taking `channels` inputs (6, or 8 with padding).
Tensor encode_input(const Tensor& rgb, std::size_t channels);
/// Stacks encoded [C,H,W] images into [N,C,H,W].
Tensor stack(const std::vector<Tensor>& images);

/// Bilinear resampling of [C,H,W] with half-pixel centers and edge clamping.
Tensor resize_bilinear(const Tensor& image, std::size_t out_h, std::size_t out_w);
Tensor crop(const Tensor& image, std::size_t y0, std::size_t x0, std::size_t h, std::size_t w);
Tensor hflip(const Tensor& image);
/// Resizes the shorter side to `size`, then center crops to size x size.
Tensor resize_center_crop(const Tensor& image, std::size_t size);

struct AugmentOptions {
  double min_scale = 0.6;  ///< crop area fraction range
  double max_scale = 1.0;
  double flip_probability = 0.5;
};

/// Random square crop covering [min_scale, max_scale] of the shorter side's
/// area, resized to out_size, then a horizontal flip. The label is kept and the
/// bounding box, if any, is mapped into the new frame.
Sample augment(const Sample& sample, Rng& rng, std::size_t out_size, const AugmentOptions& options = {});

/// Independent stream for one sample in one epoch.
Rng sample_rng(std::uint64_t seed, std::uint64_t sample_index, std::uint64_t epoch);

inline constexpr const char* kShapeClasses[4] = {"circle", "square", "triangle", "cross"};

/// Deterministic four-class dataset of one coloured shape per image on a
/// textured background. Samples are interleaved by class; boxes are exact.
DatasetManifest synth_shapes(std::size_t num_per_class, std::size_t image_size, std::uint64_t seed);

/// Folder-per-class dataset of PNG/PPM/PGM files, in sorted order. Images are
/// resized and center cropped to image_size. Unreadable files are skipped and
/// recorded in `warnings`; a class without readable images is rejected.
DatasetManifest load_image_folder(const std::filesystem::path& root, std::size_t image_size);

/// Encoded batch [N,channels,H,W] of the given samples, without augmentation.
Tensor encode_samples(const DatasetManifest& manifest, const std::vector<std::size_t>& indices,
                      std::size_t channels);

/// Stratified split with `test_fraction` of each class in the test set.
void split_manifest(DatasetManifest& manifest, double test_fraction, std::uint64_t seed);

/// One "relative/path<TAB>class_index" line per sample.
void write_index(const DatasetManifest& manifest, const std::filesystem::path& path);
/// Loads the samples listed in an index file, relative to `root`. Class names
/// are taken from the first path component.
DatasetManifest load_index(const std::filesystem::path& root, const std::filesystem::path& index,
                           std::size_t image_size);

}  // namespace hxb
