#include "hxbcos/conv.hpp"

#include <algorithm>
#include <cmath>

#include "gemm.hpp"

namespace hxb {

std::size_t ConvGeometry::out_extent(std::size_t extent, std::size_t kernel) const {
  if (stride == 0 || kernel == 0) throw ShapeError("convolution stride and kernel must be positive");
  if (extent + 2 * padding < kernel) {
    throw ShapeError("non-positive output extent: input " + std::to_string(extent) + ", kernel " +
                     std::to_string(kernel) + ", padding " + std::to_string(padding));
  }
  return (extent + 2 * padding - kernel) / stride + 1;
}

namespace {

struct Plan {
  std::size_t n, c, h, w, oh, ow;
  ConvGeometry g;
  std::size_t rows() const { return c * g.kernel_h * g.kernel_w; }
  std::size_t cols() const { return oh * ow; }
};

Plan make_plan(const Shape& in, const ConvGeometry& g) {
  if (in.size() != 4) throw ShapeError("expected [N,C,H,W] input, got " + to_string(in));
  return Plan{in[0], in[1], in[2], in[3], g.out_h(in[2]), g.out_w(in[3]), g};
}

// cols[(c*kh + i)*kw + j][oy*ow + ox] = x[c][oy*s + i - p][ox*s + j - p]
void im2col(const Plan& pl, const double* x, double* cols) {
  const auto& g = pl.g;
  const std::size_t p_cols = pl.cols();
  for (std::size_t c = 0; c < pl.c; ++c) {
    for (std::size_t i = 0; i < g.kernel_h; ++i) {
      for (std::size_t j = 0; j < g.kernel_w; ++j) {
        double* dst = cols + ((c * g.kernel_h + i) * g.kernel_w + j) * p_cols;
        for (std::size_t oy = 0; oy < pl.oh; ++oy) {
          const std::ptrdiff_t y = static_cast<std::ptrdiff_t>(oy * g.stride + i) - static_cast<std::ptrdiff_t>(g.padding);
          double* drow = dst + oy * pl.ow;
          if (y < 0 || y >= static_cast<std::ptrdiff_t>(pl.h)) {
            std::fill_n(drow, pl.ow, 0.0);
            continue;
          }
          const double* src = x + (c * pl.h + static_cast<std::size_t>(y)) * pl.w;
          for (std::size_t ox = 0; ox < pl.ow; ++ox) {
            const std::ptrdiff_t xx =
                static_cast<std::ptrdiff_t>(ox * g.stride + j) - static_cast<std::ptrdiff_t>(g.padding);
            drow[ox] = (xx < 0 || xx >= static_cast<std::ptrdiff_t>(pl.w)) ? 0.0 : src[xx];
          }
        }
      }
    }
  }
}

void col2im_add(const Plan& pl, const double* cols, double* x) {
  const auto& g = pl.g;
  const std::size_t p_cols = pl.cols();
  for (std::size_t c = 0; c < pl.c; ++c) {
    for (std::size_t i = 0; i < g.kernel_h; ++i) {
      for (std::size_t j = 0; j < g.kernel_w; ++j) {
        const double* src = cols + ((c * g.kernel_h + i) * g.kernel_w + j) * p_cols;
        for (std::size_t oy = 0; oy < pl.oh; ++oy) {
          const std::ptrdiff_t y = static_cast<std::ptrdiff_t>(oy * g.stride + i) - static_cast<std::ptrdiff_t>(g.padding);
          if (y < 0 || y >= static_cast<std::ptrdiff_t>(pl.h)) continue;
          double* dst = x + (c * pl.h + static_cast<std::size_t>(y)) * pl.w;
          const double* srow = src + oy * pl.ow;
          for (std::size_t ox = 0; ox < pl.ow; ++ox) {
            const std::ptrdiff_t xx =
                static_cast<std::ptrdiff_t>(ox * g.stride + j) - static_cast<std::ptrdiff_t>(g.padding);
            if (xx >= 0 && xx < static_cast<std::ptrdiff_t>(pl.w)) dst[xx] += srow[ox];
          }
        }
      }
    }
  }
}

}  // namespace

Tensor conv2d(const Tensor& input, const Tensor& weight, std::size_t stride, std::size_t padding) {
  if (weight.dim() != 4) throw ShapeError("expected [Cout,Cin,kh,kw] weight, got " + to_string(weight.shape()));
  if (input.dim() != 4 || input.extent(1) != weight.extent(1)) {
    throw ShapeError("conv2d channel mismatch: input " + to_string(input.shape()) + ", weight " +
                     to_string(weight.shape()));
  }
  const ConvGeometry g{weight.extent(2), weight.extent(3), stride, padding};
  const Plan pl = make_plan(input.shape(), g);
  const std::size_t cout = weight.extent(0);
  const std::size_t k = pl.rows(), p = pl.cols();

  std::vector<double> y(pl.n * cout * p, 0.0);
  std::vector<double> cols(k * p);
  const auto x = input.data();
  const auto w = weight.data();
  for (std::size_t s = 0; s < pl.n; ++s) {
    im2col(pl, x.data() + s * pl.c * pl.h * pl.w, cols.data());
    detail::gemm_accumulate(cout, p, k, w.data(), cols.data(), y.data() + s * cout * p);
  }

  return Tensor::make_result(
      Shape{pl.n, cout, pl.oh, pl.ow}, std::move(y), "conv2d", {input, weight},
      [input, weight, pl, cout](std::span<const double> gout, std::span<std::vector<double>* const> gi) {
        const std::size_t k = pl.rows(), p = pl.cols();
        const std::size_t in_size = pl.c * pl.h * pl.w;
        const auto x = input.data();
        const auto w = weight.data();
        std::vector<double> cols(k * p);
        if (auto* gw = gi[1]) {
          std::vector<double> cols_t(p * k);
          for (std::size_t s = 0; s < pl.n; ++s) {
            im2col(pl, x.data() + s * in_size, cols.data());
            detail::transpose(k, p, cols.data(), cols_t.data());
            detail::gemm_accumulate(cout, k, p, gout.data() + s * cout * p, cols_t.data(), gw->data());
          }
        }
        if (auto* gx = gi[0]) {
          std::vector<double> w_t(k * cout);
          detail::transpose(cout, k, w.data(), w_t.data());
          for (std::size_t s = 0; s < pl.n; ++s) {
            std::fill(cols.begin(), cols.end(), 0.0);
            detail::gemm_accumulate(k, p, cout, w_t.data(), gout.data() + s * cout * p, cols.data());
            col2im_add(pl, cols.data(), gx->data() + s * in_size);
          }
        }
      });
}

Tensor patch_norms(const Tensor& input, const ConvGeometry& geometry) {
  const Plan pl = make_plan(input.shape(), geometry);
  const auto x = input.data();
  const std::size_t plane = pl.h * pl.w;

  // Channel sum of squares, then a strided box sum over each window.
  std::vector<double> sq(pl.n * plane, 0.0);
  for (std::size_t s = 0; s < pl.n; ++s) {
    double* dst = sq.data() + s * plane;
    for (std::size_t c = 0; c < pl.c; ++c) {
      const double* src = x.data() + (s * pl.c + c) * plane;
      for (std::size_t i = 0; i < plane; ++i) dst[i] += src[i] * src[i];
    }
  }

  auto for_each_window = [pl](auto&& visit) {
    const auto& g = pl.g;
    for (std::size_t s = 0; s < pl.n; ++s) {
      for (std::size_t oy = 0; oy < pl.oh; ++oy) {
        for (std::size_t ox = 0; ox < pl.ow; ++ox) {
          const std::size_t o = (s * pl.oh + oy) * pl.ow + ox;
          for (std::size_t i = 0; i < g.kernel_h; ++i) {
            const std::ptrdiff_t y = static_cast<std::ptrdiff_t>(oy * g.stride + i) - static_cast<std::ptrdiff_t>(g.padding);
            if (y < 0 || y >= static_cast<std::ptrdiff_t>(pl.h)) continue;
            for (std::size_t j = 0; j < g.kernel_w; ++j) {
              const std::ptrdiff_t xx =
                  static_cast<std::ptrdiff_t>(ox * g.stride + j) - static_cast<std::ptrdiff_t>(g.padding);
              if (xx < 0 || xx >= static_cast<std::ptrdiff_t>(pl.w)) continue;
              visit(o, (s * pl.h + static_cast<std::size_t>(y)) * pl.w + static_cast<std::size_t>(xx));
            }
          }
        }
      }
    }
  };

  std::vector<double> y(pl.n * pl.oh * pl.ow, 0.0);
  for_each_window([&](std::size_t o, std::size_t i) { y[o] += sq[i]; });
  for (auto& v : y) v = std::sqrt(v);

  std::vector<double> norms = y;
  return Tensor::make_result(
      Shape{pl.n, 1, pl.oh, pl.ow}, std::move(y), "patch_norms", {input},
      [input, pl, norms, for_each_window](std::span<const double> gout, std::span<std::vector<double>* const> gi) {
        const std::size_t plane = pl.h * pl.w;
        std::vector<double> acc(pl.n * plane, 0.0);
        for_each_window([&](std::size_t o, std::size_t i) {
          if (norms[o] > 0.0) acc[i] += gout[o] / norms[o];
        });
        const auto x = input.data();
        auto& gx = *gi[0];
        for (std::size_t s = 0; s < pl.n; ++s) {
          for (std::size_t c = 0; c < pl.c; ++c) {
            const std::size_t base = (s * pl.c + c) * plane;
            for (std::size_t i = 0; i < plane; ++i) gx[base + i] += x[base + i] * acc[s * plane + i];
          }
        }
      });
}

}  // namespace hxb
