#include "hxbcos/bcos.hpp"

#include <cmath>

#include "hxbcos/ops.hpp"

namespace hxb {

DenseWeight DenseWeight::create(std::size_t cout, std::size_t cin, std::size_t kh, std::size_t kw, Rng& rng) {
  Tensor w = Tensor::randn({cout, cin, kh, kw}, rng, std::sqrt(2.0 / static_cast<double>(cin * kh * kw)));
  for (auto& v : w.mutable_data()) v = round_to_f32(v);
  return DenseWeight{w.set_requires_grad(true)};
}

Tensor row_normalize(const Tensor& weight, double epsilon) {
  if (weight.dim() < 2) throw ShapeError("row_normalize expects [Cout, ...], got " + to_string(weight.shape()));
  std::vector<std::size_t> axes;
  for (std::size_t d = 1; d < weight.dim(); ++d) axes.push_back(d);
  return div(weight, max2(l2_norm(weight, axes), epsilon));
}

Tensor maxout(const Tensor& h, std::size_t units) {
  if (h.dim() != 4) throw ShapeError("maxout expects [N,C,H,W], got " + to_string(h.shape()));
  if (units == 0 || h.extent(1) % units != 0) {
    throw ShapeError("maxout: " + std::to_string(h.extent(1)) + " channels not divisible by " +
                     std::to_string(units) + " units");
  }
  if (units == 1) return h;
  const std::size_t n = h.extent(0), c = h.extent(1) / units, plane = h.extent(2) * h.extent(3);
  const auto x = h.data();
  std::vector<double> y(n * c * plane);
  std::vector<std::size_t> arg(y.size());
  for (std::size_t s = 0; s < n; ++s)
    for (std::size_t g = 0; g < c; ++g)
      for (std::size_t i = 0; i < plane; ++i) {
        std::size_t best = ((s * c + g) * units) * plane + i;
        for (std::size_t u = 1; u < units; ++u) {
          const std::size_t cand = ((s * c + g) * units + u) * plane + i;
          if (x[cand] > x[best]) best = cand;
        }
        const std::size_t o = (s * c + g) * plane + i;
        y[o] = x[best];
        arg[o] = best;
      }
  return Tensor::make_result(Shape{n, c, h.extent(2), h.extent(3)}, std::move(y), "maxout", {h},
                             [arg](std::span<const double> g, std::span<std::vector<double>* const> gi) {
                               auto& gx = *gi[0];
                               for (std::size_t o = 0; o < g.size(); ++o) gx[arg[o]] += g[o];
                             });
}

BcosConv::BcosConv(WeightSource weight, BcosOptions options) : weight_(std::move(weight)), options_(options) {
  if (options_.b_exp < 1.0) throw std::invalid_argument("B-cos exponent must be >= 1");
  if (options_.maxout_units == 0 || units() % options_.maxout_units != 0) {
    throw std::invalid_argument("layer units (" + std::to_string(units()) + ") not divisible by maxout units (" +
                                std::to_string(options_.maxout_units) + ")");
  }
  if (const auto* d = std::get_if<DenseWeight>(&weight_); d && d->weight.dim() != 4) {
    throw ShapeError("dense weight must be [Cout,Cin,kh,kw], got " + to_string(d->weight.shape()));
  }
}

std::size_t BcosConv::units() const {
  if (const auto* d = std::get_if<DenseWeight>(&weight_)) return d->weight.extent(0);
  return std::get<PhWeightSpec>(weight_).out_channels();
}

std::size_t BcosConv::in_channels() const {
  if (const auto* d = std::get_if<DenseWeight>(&weight_)) return d->weight.extent(1);
  return std::get<PhWeightSpec>(weight_).in_channels();
}

ConvGeometry BcosConv::geometry() const {
  if (const auto* d = std::get_if<DenseWeight>(&weight_)) {
    return {d->weight.extent(2), d->weight.extent(3), options_.stride, options_.padding};
  }
  const auto& ph = std::get<PhWeightSpec>(weight_);
  return {ph.kernel_h(), ph.kernel_w(), options_.stride, options_.padding};
}

Tensor BcosConv::weight() const {
  if (const auto* d = std::get_if<DenseWeight>(&weight_)) return d->weight;
  return std::get<PhWeightSpec>(weight_).assemble();
}

Tensor BcosConv::normalized_weight() const { return row_normalize(weight(), options_.epsilon); }

// |cos|^(B-1) with cos = s / max(||patch||, eps); rows of W^ are unit length.
Tensor BcosConv::scaling(const Tensor& s, const Tensor& h) const {
  const Tensor norms = max2(patch_norms(h, geometry()), options_.epsilon);
  return pow_const(abs(div(s, norms)), options_.b_exp - 1.0);
}

Tensor BcosConv::transform(const Tensor& h, Dynamics dynamics) const {
  if (h.dim() != 4 || h.extent(1) != in_channels()) {
    throw ShapeError("B-cos layer expects [N," + std::to_string(in_channels()) + ",H,W], got " +
                     to_string(h.shape()));
  }
  const Tensor w_hat = normalized_weight();
  const Tensor s = conv2d(h, w_hat, options_.stride, options_.padding);
  if (options_.b_exp == 1.0) return s;
  Tensor factor = scaling(s, h);
  if (dynamics == Dynamics::frozen) factor = detach(factor);
  return mul(s, factor);
}

Tensor BcosConv::forward(const Tensor& h, Dynamics dynamics) const {
  return maxout(transform(h, dynamics), options_.maxout_units);
}

DynamicMatrix BcosConv::dynamic_matrix(const Tensor& h) const {
  NoGradGuard no_grad;
  const Tensor w_hat = normalized_weight();
  const Tensor s = conv2d(h, w_hat, options_.stride, options_.padding);
  Tensor scale = options_.b_exp == 1.0 ? Tensor::ones(s.shape()) : scaling(s, h);
  return DynamicMatrix{detach(w_hat), detach(scale), geometry(), h.shape()};
}

Tensor DynamicMatrix::apply(const Tensor& h) const {
  return mul(conv2d(h, weight_hat, geometry.stride, geometry.padding), scale);
}

std::vector<double> DynamicMatrix::materialize(std::size_t sample) const {
  const std::size_t cout = weight_hat.extent(0), cin = input_shape[1];
  const std::size_t h = input_shape[2], w = input_shape[3];
  const std::size_t oh = scale.extent(2), ow = scale.extent(3);
  const std::size_t ncols = cin * h * w;
  std::vector<double> m(cout * oh * ow * ncols, 0.0);
  const auto wv = weight_hat.data();
  const auto sv = scale.data();
  for (std::size_t co = 0; co < cout; ++co)
    for (std::size_t oy = 0; oy < oh; ++oy)
      for (std::size_t ox = 0; ox < ow; ++ox) {
        const std::size_t row = (co * oh + oy) * ow + ox;
        const double f = sv[((sample * cout + co) * oh + oy) * ow + ox];
        for (std::size_t ci = 0; ci < cin; ++ci)
          for (std::size_t i = 0; i < geometry.kernel_h; ++i)
            for (std::size_t j = 0; j < geometry.kernel_w; ++j) {
              const auto y = static_cast<std::ptrdiff_t>(oy * geometry.stride + i) -
                             static_cast<std::ptrdiff_t>(geometry.padding);
              const auto x = static_cast<std::ptrdiff_t>(ox * geometry.stride + j) -
                             static_cast<std::ptrdiff_t>(geometry.padding);
              if (y < 0 || x < 0 || y >= static_cast<std::ptrdiff_t>(h) || x >= static_cast<std::ptrdiff_t>(w)) {
                continue;
              }
              const std::size_t col = (ci * h + static_cast<std::size_t>(y)) * w + static_cast<std::size_t>(x);
              m[row * ncols + col] +=
                  f * wv[((co * cin + ci) * geometry.kernel_h + i) * geometry.kernel_w + j];
            }
      }
  return m;
}

ParamCount BcosConv::param_count() const {
  if (const auto* d = std::get_if<DenseWeight>(&weight_)) return ParamCount{d->weight.numel(), 0};
  return std::get<PhWeightSpec>(weight_).param_count();
}

std::vector<NamedTensor> BcosConv::parameters(const std::string& prefix) const {
  if (const auto* d = std::get_if<DenseWeight>(&weight_)) return {{prefix + ".weight", d->weight}};
  return std::get<PhWeightSpec>(weight_).parameters(prefix);
}

}  // namespace hxb
