#pragma once

#include <array>
#include <string>
#include <utility>
#include <vector>

#include "hxbcos/tensor.hpp"

namespace hxb {

struct Quaternion {
  double q0 = 0.0, q1 = 0.0, q2 = 0.0, q3 = 0.0;
  friend bool operator==(const Quaternion&, const Quaternion&) = default;
};

/// Non-commutative quaternion product p x q.
Quaternion hamilton_product(const Quaternion& p, const Quaternion& q);

/// The four fixed 4x4 algebra matrices whose Kronecker sum with four filter
/// banks yields a quaternion (Hamilton-product) weight. A_1 is the identity.
std::array<Tensor, 4> hamilton_algebra_matrices();

/// Kronecker product over the two leading axes: A [p,q], F [r,s,...] ->
/// [p*r, q*s, ...] with block (i,j) equal to A[i,j] * F. Differentiable in both.
Tensor kronecker(const Tensor& a, const Tensor& f);

enum class AlgebraMode { learnable, hamilton_fixed };

/// Learnable scalar counts of one layer or of a whole model.
struct ParamCount {
  std::size_t filters = 0;  ///< convolution filter scalars
  std::size_t algebra = 0;  ///< learnable algebra-matrix scalars
  std::size_t total() const { return filters + algebra; }
  ParamCount& operator+=(const ParamCount& o) {
    filters += o.filters;
    algebra += o.algebra;
    return *this;
  }
};

using NamedTensor = std::pair<std::string, Tensor>;

/// Parameterized hypercomplex convolution weight W = sum_i A_i (x) F_i.
///
/// Holds n algebra matrices (n x n) and n filter banks of shape
/// [Cout/n, Cin/n, kh, kw]. In hamilton_fixed mode n is 4 and the algebra is
/// the constant Hamilton set; otherwise the algebra matrices are learned.
class PhWeightSpec {
 public:
  /// Fresh spec: filters are normal with std sqrt(2/(Cin*kh*kw)); learnable
  /// algebra entries are normal with std 1/n. Values are rounded to binary32.
  static PhWeightSpec create(std::size_t n, std::size_t cout, std::size_t cin, std::size_t kh, std::size_t kw,
                             AlgebraMode mode, Rng& rng);
  /// Spec from explicit parts; validates every structural invariant.
  static PhWeightSpec from_parts(std::vector<Tensor> algebra, std::vector<Tensor> filters, AlgebraMode mode);

  std::size_t n() const { return algebra_.size(); }
  AlgebraMode mode() const { return mode_; }
  std::size_t out_channels() const { return n() * filters_.front().extent(0); }
  std::size_t in_channels() const { return n() * filters_.front().extent(1); }
  std::size_t kernel_h() const { return filters_.front().extent(2); }
  std::size_t kernel_w() const { return filters_.front().extent(3); }
  const std::vector<Tensor>& algebra() const { return algebra_; }
  const std::vector<Tensor>& filters() const { return filters_; }

  /// W = sum_i kronecker(A_i, F_i), recomputed on every call.
  Tensor assemble() const;
  ParamCount param_count() const;
  std::vector<NamedTensor> parameters(const std::string& prefix) const;

 private:
  PhWeightSpec(std::vector<Tensor> algebra, std::vector<Tensor> filters, AlgebraMode mode)
      : algebra_(std::move(algebra)), filters_(std::move(filters)), mode_(mode) {}

  std::vector<Tensor> algebra_;
  std::vector<Tensor> filters_;
  AlgebraMode mode_;
};

/// Free-function form of PhWeightSpec::assemble.
inline Tensor assemble_ph_weight(const PhWeightSpec& spec) { return spec.assemble(); }

/// Scalar count of an ordinary dense convolution weight.
inline ParamCount dense_param_count(std::size_t cout, std::size_t cin, std::size_t kh, std::size_t kw) {
  return ParamCount{cout * cin * kh * kw, 0};
}

}  // namespace hxb
