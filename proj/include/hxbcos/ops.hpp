#pragma once

#include <vector>

#include "hxbcos/tensor.hpp"

namespace hxb {

// Elementwise arithmetic. Operands broadcast when one is a single element or
// when both have the same rank and every extent either matches or is 1.
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor div(const Tensor& a, const Tensor& b);
/// Elementwise maximum; on ties the gradient goes to `a`.
Tensor max2(const Tensor& a, const Tensor& b);

Tensor add(const Tensor& a, double b);
Tensor mul(const Tensor& a, double b);
Tensor max2(const Tensor& a, double b);

/// x^p for a constant exponent. The derivative is taken as 0 where it is
/// unbounded (x == 0 with p < 1).
Tensor pow_const(const Tensor& x, double p);
/// |x|, with subgradient 0 at 0.
Tensor abs(const Tensor& x);
/// -1, 0 or 1; zero gradient everywhere.
Tensor sign(const Tensor& x);
/// sqrt(x); derivative taken as 0 at x == 0.
Tensor sqrt(const Tensor& x);
Tensor sigmoid(const Tensor& x);
Tensor log(const Tensor& x);
Tensor exp(const Tensor& x);

inline Tensor operator+(const Tensor& a, const Tensor& b) { return add(a, b); }
inline Tensor operator-(const Tensor& a, const Tensor& b) { return sub(a, b); }
inline Tensor operator*(const Tensor& a, const Tensor& b) { return mul(a, b); }
inline Tensor operator/(const Tensor& a, const Tensor& b) { return div(a, b); }
inline Tensor operator*(const Tensor& a, double b) { return mul(a, b); }
inline Tensor operator*(double a, const Tensor& b) { return mul(b, a); }

/// Shape produced by broadcasting `a` against `b`; throws ShapeError.
Shape broadcast_shape(const Shape& a, const Shape& b);

// Reductions. `axes` must be non-empty and in range; reduced axes are kept as
// extent 1 when keepdim is set and dropped otherwise (a full reduction yields
// shape [1]).
Tensor sum(const Tensor& t);
Tensor sum(const Tensor& t, const std::vector<std::size_t>& axes, bool keepdim = true);
Tensor mean(const Tensor& t);
Tensor mean(const Tensor& t, const std::vector<std::size_t>& axes, bool keepdim = true);
/// Maximum along one axis; the gradient goes to the first maximal element.
Tensor max_over_axis(const Tensor& t, std::size_t axis, bool keepdim = true);
Tensor l2_norm(const Tensor& t, const std::vector<std::size_t>& axes, bool keepdim = true);

/// Concatenation along `axis`; all other extents must agree.
Tensor concat(const std::vector<Tensor>& parts, std::size_t axis);
/// Single element at a flat offset, as a shape [1] tensor.
Tensor select(const Tensor& t, std::size_t flat_index);
/// Mean over the two trailing spatial axes of an [N,C,H,W] tensor -> [N,C].
Tensor global_avg_pool(const Tensor& t);

}  // namespace hxb
