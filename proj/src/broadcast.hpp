#pragma once

#include <vector>

#include "hxbcos/tensor.hpp"

namespace hxb::detail {

inline std::vector<std::size_t> broadcast_strides(const Shape& operand, const Shape& out) {
  std::vector<std::size_t> strides(out.size(), 0);
  if (numel(operand) == 1) return strides;
  std::size_t stride = 1;
  for (std::size_t d = out.size(); d-- > 0;) {
    strides[d] = operand[d] == 1 ? 0 : stride;
    stride *= operand[d];
  }
  return strides;
}

/// Calls f(out_index, a_index, b_index) for every element of `out`, where the
/// operand shapes broadcast to `out`. Visits output elements in order.
template <class F>
void for_each_broadcast(const Shape& out, const Shape& a, const Shape& b, F&& f) {
  const std::size_t n = numel(out);
  const bool a_full = a == out;
  const bool b_full = b == out;
  if (a_full && b_full) {
    for (std::size_t i = 0; i < n; ++i) f(i, i, i);
    return;
  }
  const bool a_one = numel(a) == 1;
  const bool b_one = numel(b) == 1;
  if (a_full && b_one) {
    for (std::size_t i = 0; i < n; ++i) f(i, i, std::size_t{0});
    return;
  }
  if (a_one && b_full) {
    for (std::size_t i = 0; i < n; ++i) f(i, std::size_t{0}, i);
    return;
  }
  const auto sa = broadcast_strides(a, out);
  const auto sb = broadcast_strides(b, out);
  const std::size_t rank = out.size();
  const std::size_t inner = out[rank - 1];
  const std::size_t ia_step = sa[rank - 1];
  const std::size_t ib_step = sb[rank - 1];
  std::vector<std::size_t> coord(rank, 0);
  std::size_t ia = 0, ib = 0, o = 0;
  while (o < n) {
    std::size_t xa = ia, xb = ib;
    for (std::size_t j = 0; j < inner; ++j, ++o, xa += ia_step, xb += ib_step) f(o, xa, xb);
    // carry into the outer axes
    std::size_t d = rank - 1;
    while (d-- > 0) {
      ++coord[d];
      ia += sa[d];
      ib += sb[d];
      if (coord[d] < out[d]) break;
      ia -= sa[d] * coord[d];
      ib -= sb[d] * coord[d];
      coord[d] = 0;
    }
  }
}

}  // namespace hxb::detail
