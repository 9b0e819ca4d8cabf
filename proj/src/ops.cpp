#include "hxbcos/ops.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "broadcast.hpp"

namespace hxb {

using detail::for_each_broadcast;

Shape broadcast_shape(const Shape& a, const Shape& b) {
  if (a == b) return a;
  const auto na = numel(a);
  const auto nb = numel(b);
  if (nb == 1 && (na != 1 || a.size() >= b.size())) return a;
  if (na == 1) return b;
  if (a.size() != b.size()) {
    throw ShapeError("cannot broadcast " + to_string(a) + " with " + to_string(b));
  }
  Shape out(a.size());
  for (std::size_t d = 0; d < a.size(); ++d) {
    if (a[d] == b[d] || b[d] == 1) {
      out[d] = a[d];
    } else if (a[d] == 1) {
      out[d] = b[d];
    } else {
      throw ShapeError("cannot broadcast " + to_string(a) + " with " + to_string(b));
    }
  }
  return out;
}

namespace {

// Binary op with forward f(a,b) and partials da(a,b,y), db(a,b,y).
template <class F, class DA, class DB>
Tensor binary(const char* name, const Tensor& a, const Tensor& b, F f, DA da, DB db) {
  Shape out = broadcast_shape(a.shape(), b.shape());
  std::vector<double> y(numel(out));
  const auto av = a.data();
  const auto bv = b.data();
  for_each_broadcast(out, a.shape(), b.shape(),
                     [&](std::size_t o, std::size_t ia, std::size_t ib) { y[o] = f(av[ia], bv[ib]); });
  return Tensor::make_result(
      out, std::move(y), name, {a, b},
      [a, b, out, da, db](std::span<const double> g, std::span<std::vector<double>* const> gi) {
        const auto av = a.data();
        const auto bv = b.data();
        auto* ga = gi[0];
        auto* gb = gi[1];
        for_each_broadcast(out, a.shape(), b.shape(), [&](std::size_t o, std::size_t ia, std::size_t ib) {
          if (ga) (*ga)[ia] += g[o] * da(av[ia], bv[ib]);
          if (gb) (*gb)[ib] += g[o] * db(av[ia], bv[ib]);
        });
      });
}

// Unary op; the derivative may look at the input value only.
template <class F, class D>
Tensor unary(const char* name, const Tensor& x, F f, D d) {
  const auto xv = x.data();
  std::vector<double> y(xv.size());
  for (std::size_t i = 0; i < xv.size(); ++i) y[i] = f(xv[i]);
  return Tensor::make_result(x.shape(), std::move(y), name, {x},
                             [x, d](std::span<const double> g, std::span<std::vector<double>* const> gi) {
                               const auto xv = x.data();
                               auto& gx = *gi[0];
                               for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * d(xv[i]);
                             });
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
  return binary(
      "add", a, b, [](double x, double y) { return x + y; }, [](double, double) { return 1.0; },
      [](double, double) { return 1.0; });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  return binary(
      "sub", a, b, [](double x, double y) { return x - y; }, [](double, double) { return 1.0; },
      [](double, double) { return -1.0; });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  return binary(
      "mul", a, b, [](double x, double y) { return x * y; }, [](double, double y) { return y; },
      [](double x, double) { return x; });
}

Tensor div(const Tensor& a, const Tensor& b) {
  return binary(
      "div", a, b, [](double x, double y) { return x / y; }, [](double, double y) { return 1.0 / y; },
      [](double x, double y) { return -x / (y * y); });
}

Tensor max2(const Tensor& a, const Tensor& b) {
  return binary(
      "max2", a, b, [](double x, double y) { return x >= y ? x : y; },
      [](double x, double y) { return x >= y ? 1.0 : 0.0; },
      [](double x, double y) { return x >= y ? 0.0 : 1.0; });
}

Tensor add(const Tensor& a, double b) {
  return unary(
      "add_scalar", a, [b](double x) { return x + b; }, [](double) { return 1.0; });
}

Tensor mul(const Tensor& a, double b) {
  return unary(
      "mul_scalar", a, [b](double x) { return x * b; }, [b](double) { return b; });
}

Tensor max2(const Tensor& a, double b) {
  return unary(
      "max2_scalar", a, [b](double x) { return x >= b ? x : b; },
      [b](double x) { return x >= b ? 1.0 : 0.0; });
}

Tensor pow_const(const Tensor& x, double p) {
  if (p == 1.0) {
    return unary(
        "pow_const", x, [](double v) { return v; }, [](double) { return 1.0; });
  }
  if (p == 2.0) {
    return unary(
        "pow_const", x, [](double v) { return v * v; }, [](double v) { return 2.0 * v; });
  }
  return unary(
      "pow_const", x, [p](double v) { return std::pow(v, p); },
      [p](double v) {
        if (p == 0.0) return 0.0;
        if (v == 0.0 && p < 1.0) return 0.0;
        return p * std::pow(v, p - 1.0);
      });
}

Tensor abs(const Tensor& x) {
  return unary(
      "abs", x, [](double v) { return std::fabs(v); },
      [](double v) { return v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0); });
}

Tensor sign(const Tensor& x) {
  return unary(
      "sign", x, [](double v) { return v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0); },
      [](double) { return 0.0; });
}

Tensor sqrt(const Tensor& x) {
  return unary(
      "sqrt", x, [](double v) { return std::sqrt(v); },
      [](double v) { return v > 0.0 ? 0.5 / std::sqrt(v) : 0.0; });
}

namespace {
double stable_sigmoid(double v) {
  if (v >= 0.0) return 1.0 / (1.0 + std::exp(-v));
  const double e = std::exp(v);
  return e / (1.0 + e);
}
}  // namespace

Tensor sigmoid(const Tensor& x) {
  return unary("sigmoid", x, stable_sigmoid, [](double v) {
    const double s = stable_sigmoid(v);
    return s * (1.0 - s);
  });
}

Tensor log(const Tensor& x) {
  return unary(
      "log", x, [](double v) { return std::log(v); }, [](double v) { return 1.0 / v; });
}

Tensor exp(const Tensor& x) {
  return unary(
      "exp", x, [](double v) { return std::exp(v); }, [](double v) { return std::exp(v); });
}

// ---------------------------------------------------------------------------
// Reductions

namespace {

Shape reduced_shape(const Shape& in, const std::vector<std::size_t>& axes) {
  if (axes.empty()) throw ShapeError("empty reduction: no axes given for " + to_string(in));
  Shape out = in;
  for (auto ax : axes) {
    if (ax >= in.size()) {
      throw ShapeError("reduction axis " + std::to_string(ax) + " out of range for " + to_string(in));
    }
    out[ax] = 1;
  }
  return out;
}

Shape drop_axes(const Shape& in, const std::vector<std::size_t>& axes) {
  Shape out;
  for (std::size_t d = 0; d < in.size(); ++d) {
    if (std::find(axes.begin(), axes.end(), d) == axes.end()) out.push_back(in[d]);
  }
  if (out.empty()) out.push_back(1);
  return out;
}

std::vector<std::size_t> all_axes(const Tensor& t) {
  std::vector<std::size_t> axes(t.dim());
  std::iota(axes.begin(), axes.end(), 0);
  return axes;
}

Tensor finish(const Tensor& r, const Tensor& t, const std::vector<std::size_t>& axes, bool keepdim) {
  if (keepdim) return r;
  return r.reshape(drop_axes(t.shape(), axes));
}

}  // namespace

Tensor sum(const Tensor& t, const std::vector<std::size_t>& axes, bool keepdim) {
  const Shape in = t.shape();
  const Shape out = reduced_shape(in, axes);
  std::vector<double> y(numel(out), 0.0);
  const auto x = t.data();
  for_each_broadcast(in, in, out, [&](std::size_t, std::size_t i, std::size_t o) { y[o] += x[i]; });
  Tensor r = Tensor::make_result(out, std::move(y), "sum", {t},
                                 [in, out](std::span<const double> g, std::span<std::vector<double>* const> gi) {
                                   auto& gx = *gi[0];
                                   for_each_broadcast(in, in, out, [&](std::size_t, std::size_t i, std::size_t o) {
                                     gx[i] += g[o];
                                   });
                                 });
  return finish(r, t, axes, keepdim);
}

Tensor sum(const Tensor& t) { return sum(t, all_axes(t), false); }

Tensor mean(const Tensor& t, const std::vector<std::size_t>& axes, bool keepdim) {
  const Shape out = reduced_shape(t.shape(), axes);
  const double count = static_cast<double>(t.numel() / numel(out));
  return mul(sum(t, axes, keepdim), 1.0 / count);
}

Tensor mean(const Tensor& t) { return mean(t, all_axes(t), false); }

Tensor max_over_axis(const Tensor& t, std::size_t axis, bool keepdim) {
  const Shape in = t.shape();
  const Shape out = reduced_shape(in, {axis});
  const auto x = t.data();
  std::vector<double> y(numel(out), 0.0);
  std::vector<std::size_t> arg(numel(out), static_cast<std::size_t>(-1));
  for_each_broadcast(in, in, out, [&](std::size_t, std::size_t i, std::size_t o) {
    // Elements are visited in increasing index order, so a strict comparison
    // keeps the first maximum.
    if (arg[o] == static_cast<std::size_t>(-1) || x[i] > y[o]) {
      y[o] = x[i];
      arg[o] = i;
    }
  });
  Tensor r = Tensor::make_result(out, std::move(y), "max_over_axis", {t},
                                 [arg](std::span<const double> g, std::span<std::vector<double>* const> gi) {
                                   auto& gx = *gi[0];
                                   for (std::size_t o = 0; o < g.size(); ++o) gx[arg[o]] += g[o];
                                 });
  return finish(r, t, {axis}, keepdim);
}

Tensor l2_norm(const Tensor& t, const std::vector<std::size_t>& axes, bool keepdim) {
  const Shape in = t.shape();
  const Shape out = reduced_shape(in, axes);
  const auto x = t.data();
  std::vector<double> y(numel(out), 0.0);
  for_each_broadcast(in, in, out, [&](std::size_t, std::size_t i, std::size_t o) { y[o] += x[i] * x[i]; });
  for (auto& v : y) v = std::sqrt(v);
  std::vector<double> norms = y;
  Tensor r = Tensor::make_result(
      out, std::move(y), "l2_norm", {t},
      [t, in, out, norms](std::span<const double> g, std::span<std::vector<double>* const> gi) {
        const auto x = t.data();
        auto& gx = *gi[0];
        for_each_broadcast(in, in, out, [&](std::size_t, std::size_t i, std::size_t o) {
          if (norms[o] > 0.0) gx[i] += g[o] * x[i] / norms[o];
        });
      });
  return finish(r, t, axes, keepdim);
}

// ---------------------------------------------------------------------------
// Structural ops

Tensor concat(const std::vector<Tensor>& parts, std::size_t axis) {
  if (parts.empty()) throw ShapeError("concat of zero tensors");
  const Shape& first = parts.front().shape();
  if (axis >= first.size()) throw ShapeError("concat axis out of range for " + to_string(first));
  Shape out = first;
  out[axis] = 0;
  for (const auto& p : parts) {
    const Shape& s = p.shape();
    bool ok = s.size() == first.size();
    for (std::size_t d = 0; ok && d < s.size(); ++d) ok = d == axis || s[d] == first[d];
    if (!ok) throw ShapeError("concat: " + to_string(s) + " does not match " + to_string(first));
    out[axis] += s[axis];
  }
  std::size_t outer = 1, inner = 1;
  for (std::size_t d = 0; d < axis; ++d) outer *= out[d];
  for (std::size_t d = axis + 1; d < out.size(); ++d) inner *= out[d];

  std::vector<double> y(numel(out));
  std::vector<std::size_t> widths;
  for (const auto& p : parts) widths.push_back(p.extent(axis) * inner);
  const std::size_t row = out[axis] * inner;
  std::size_t col = 0;
  for (std::size_t k = 0; k < parts.size(); ++k) {
    const auto x = parts[k].data();
    for (std::size_t o = 0; o < outer; ++o) {
      std::copy_n(x.begin() + o * widths[k], widths[k], y.begin() + o * row + col);
    }
    col += widths[k];
  }
  return Tensor::make_result(out, std::move(y), "concat", parts,
                             [widths, outer, row](std::span<const double> g,
                                                  std::span<std::vector<double>* const> gi) {
                               std::size_t col = 0;
                               for (std::size_t k = 0; k < gi.size(); ++k) {
                                 if (gi[k]) {
                                   auto& dst = *gi[k];
                                   for (std::size_t o = 0; o < outer; ++o) {
                                     for (std::size_t j = 0; j < widths[k]; ++j) {
                                       dst[o * widths[k] + j] += g[o * row + col + j];
                                     }
                                   }
                                 }
                                 col += widths[k];
                               }
                             });
}

Tensor select(const Tensor& t, std::size_t flat_index) {
  if (flat_index >= t.numel()) {
    throw std::out_of_range("select index " + std::to_string(flat_index) + " out of range for " +
                            to_string(t.shape()));
  }
  return Tensor::make_result(Shape{1}, {t.data()[flat_index]}, "select", {t},
                             [flat_index](std::span<const double> g, std::span<std::vector<double>* const> gi) {
                               (*gi[0])[flat_index] += g[0];
                             });
}

Tensor global_avg_pool(const Tensor& t) {
  if (t.dim() != 4) throw ShapeError("global_avg_pool expects [N,C,H,W], got " + to_string(t.shape()));
  return mean(t, {2, 3}, false);
}

}  // namespace hxb
