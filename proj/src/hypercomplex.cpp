#include "hxbcos/hypercomplex.hpp"

#include <cmath>

#include "hxbcos/ops.hpp"

namespace hxb {

Quaternion hamilton_product(const Quaternion& p, const Quaternion& q) {
  return Quaternion{
      p.q0 * q.q0 - p.q1 * q.q1 - p.q2 * q.q2 - p.q3 * q.q3,
      p.q0 * q.q1 + p.q1 * q.q0 + p.q2 * q.q3 - p.q3 * q.q2,
      p.q0 * q.q2 - p.q1 * q.q3 + p.q2 * q.q0 + p.q3 * q.q1,
      p.q0 * q.q3 + p.q1 * q.q2 - p.q2 * q.q1 + p.q3 * q.q0,
  };
}

std::array<Tensor, 4> hamilton_algebra_matrices() {
  // Row-major 4x4; A_k encodes where the k-th quaternion component of the
  // weight lands, with the signs of the Hamilton product.
  return {
      Tensor({4, 4}, {1, 0, 0, 0,  //
                      0, 1, 0, 0,  //
                      0, 0, 1, 0,  //
                      0, 0, 0, 1}),
      Tensor({4, 4}, {0, -1, 0, 0,  //
                      1, 0, 0, 0,   //
                      0, 0, 0, -1,  //
                      0, 0, 1, 0}),
      Tensor({4, 4}, {0, 0, -1, 0,  //
                      0, 0, 0, 1,   //
                      1, 0, 0, 0,   //
                      0, -1, 0, 0}),
      Tensor({4, 4}, {0, 0, 0, -1,  //
                      0, 0, -1, 0,  //
                      0, 1, 0, 0,   //
                      1, 0, 0, 0}),
  };
}

Tensor kronecker(const Tensor& a, const Tensor& f) {
  if (a.dim() != 2) throw ShapeError("kronecker: algebra operand must be 2-D, got " + to_string(a.shape()));
  if (f.dim() < 2) throw ShapeError("kronecker: filter operand needs >= 2 dims, got " + to_string(f.shape()));
  const std::size_t p = a.extent(0), q = a.extent(1);
  const std::size_t r = f.extent(0), s = f.extent(1);
  const std::size_t tail = f.numel() / (r * s);
  Shape out = f.shape();
  out[0] = p * r;
  out[1] = q * s;

  // out[(i*r + u), (j*s + v), t] = A[i,j] * F[u,v,t]
  auto index = [=](std::size_t i, std::size_t j, std::size_t u, std::size_t v) {
    return (((i * r + u) * (q * s)) + (j * s + v)) * tail;
  };
  std::vector<double> y(numel(out));
  const auto av = a.data();
  const auto fv = f.data();
  for (std::size_t i = 0; i < p; ++i)
    for (std::size_t j = 0; j < q; ++j) {
      const double aij = av[i * q + j];
      for (std::size_t u = 0; u < r; ++u)
        for (std::size_t v = 0; v < s; ++v) {
          const double* src = fv.data() + (u * s + v) * tail;
          double* dst = y.data() + index(i, j, u, v);
          for (std::size_t t = 0; t < tail; ++t) dst[t] = aij * src[t];
        }
    }

  return Tensor::make_result(
      std::move(out), std::move(y), "kronecker", {a, f},
      [a, f, p, q, r, s, tail, index](std::span<const double> g, std::span<std::vector<double>* const> gi) {
        const auto av = a.data();
        const auto fv = f.data();
        for (std::size_t i = 0; i < p; ++i)
          for (std::size_t j = 0; j < q; ++j) {
            const double aij = av[i * q + j];
            double ga = 0.0;
            for (std::size_t u = 0; u < r; ++u)
              for (std::size_t v = 0; v < s; ++v) {
                const double* gsrc = g.data() + index(i, j, u, v);
                const std::size_t fo = (u * s + v) * tail;
                for (std::size_t t = 0; t < tail; ++t) {
                  ga += gsrc[t] * fv[fo + t];
                  if (gi[1]) (*gi[1])[fo + t] += gsrc[t] * aij;
                }
              }
            if (gi[0]) (*gi[0])[i * q + j] += ga;
          }
      });
}

PhWeightSpec PhWeightSpec::create(std::size_t n, std::size_t cout, std::size_t cin, std::size_t kh, std::size_t kw,
                                  AlgebraMode mode, Rng& rng) {
  if (n == 0) throw std::invalid_argument("hypercomplex dimension n must be positive");
  if (cout % n != 0 || cin % n != 0) {
    throw std::invalid_argument("channels (" + std::to_string(cout) + " out, " + std::to_string(cin) +
                                " in) must be divisible by n=" + std::to_string(n));
  }
  if (mode == AlgebraMode::hamilton_fixed && n != 4) {
    throw std::invalid_argument("hamilton_fixed algebra requires n == 4, got " + std::to_string(n));
  }
  std::vector<Tensor> algebra;
  if (mode == AlgebraMode::hamilton_fixed) {
    for (auto& m : hamilton_algebra_matrices()) algebra.push_back(m);
  } else {
    for (std::size_t i = 0; i < n; ++i) {
      Tensor m = Tensor::randn({n, n}, rng, 1.0 / static_cast<double>(n));
      for (auto& v : m.mutable_data()) v = round_to_f32(v);
      algebra.push_back(m.set_requires_grad(true));
    }
  }
  const double stddev = std::sqrt(2.0 / static_cast<double>(cin * kh * kw));
  std::vector<Tensor> filters;
  for (std::size_t i = 0; i < n; ++i) {
    Tensor f = Tensor::randn({cout / n, cin / n, kh, kw}, rng, stddev);
    for (auto& v : f.mutable_data()) v = round_to_f32(v);
    filters.push_back(f.set_requires_grad(true));
  }
  return PhWeightSpec(std::move(algebra), std::move(filters), mode);
}

PhWeightSpec PhWeightSpec::from_parts(std::vector<Tensor> algebra, std::vector<Tensor> filters, AlgebraMode mode) {
  const std::size_t n = algebra.size();
  if (n == 0 || filters.size() != n) {
    throw std::invalid_argument("need n algebra matrices and n filter banks, got " + std::to_string(n) + " and " +
                                std::to_string(filters.size()));
  }
  for (const auto& a : algebra) {
    if (a.shape() != Shape{n, n}) throw ShapeError("algebra matrix must be " + to_string({n, n}));
  }
  for (const auto& f : filters) {
    if (f.dim() != 4 || f.shape() != filters.front().shape()) {
      throw ShapeError("filter banks must share one [Cout/n,Cin/n,kh,kw] shape, got " + to_string(f.shape()));
    }
  }
  if (mode == AlgebraMode::hamilton_fixed) {
    if (n != 4) throw std::invalid_argument("hamilton_fixed algebra requires n == 4");
    const auto ref = hamilton_algebra_matrices();
    for (std::size_t i = 0; i < 4; ++i) {
      const auto x = algebra[i].data();
      const auto y = ref[i].data();
      if (!std::equal(x.begin(), x.end(), y.begin())) {
        throw std::invalid_argument("hamilton_fixed algebra must be the Hamilton matrices");
      }
    }
  }
  return PhWeightSpec(std::move(algebra), std::move(filters), mode);
}

Tensor PhWeightSpec::assemble() const {
  Tensor w = kronecker(algebra_[0], filters_[0]);
  for (std::size_t i = 1; i < n(); ++i) w = add(w, kronecker(algebra_[i], filters_[i]));
  return w;
}

ParamCount PhWeightSpec::param_count() const {
  ParamCount c;
  for (const auto& f : filters_) c.filters += f.numel();
  if (mode_ == AlgebraMode::learnable) {
    for (const auto& a : algebra_) c.algebra += a.numel();
  }
  return c;
}

std::vector<NamedTensor> PhWeightSpec::parameters(const std::string& prefix) const {
  std::vector<NamedTensor> out;
  if (mode_ == AlgebraMode::learnable) {
    for (std::size_t i = 0; i < n(); ++i) out.emplace_back(prefix + ".algebra." + std::to_string(i), algebra_[i]);
  }
  for (std::size_t i = 0; i < n(); ++i) out.emplace_back(prefix + ".filter." + std::to_string(i), filters_[i]);
  return out;
}

}  // namespace hxb
