#pragma once

#include "hxbcos/tensor.hpp"

namespace hxb {

/// Sliding-window geometry shared by convolution and patch norms.
struct ConvGeometry {
  std::size_t kernel_h = 3;
  std::size_t kernel_w = 3;
  std::size_t stride = 1;
  std::size_t padding = 1;

  /// floor((extent + 2p - k) / stride) + 1; throws ShapeError when not positive.
  std::size_t out_extent(std::size_t extent, std::size_t kernel) const;
  std::size_t out_h(std::size_t h) const { return out_extent(h, kernel_h); }
  std::size_t out_w(std::size_t w) const { return out_extent(w, kernel_w); }
};

/// Bias-free 2-D cross-correlation with zero padding.
/// input [N,Cin,H,W], weight [Cout,Cin,kh,kw] -> [N,Cout,H',W'].
Tensor conv2d(const Tensor& input, const Tensor& weight, std::size_t stride, std::size_t padding);

/// Euclidean norm of every zero-padded input patch across all channels:
/// [N,C,H,W] -> [N,1,H',W']. Equal to sqrt(conv2d(input^2, ones)).
Tensor patch_norms(const Tensor& input, const ConvGeometry& geometry);

}  // namespace hxb
