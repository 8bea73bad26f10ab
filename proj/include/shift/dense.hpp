#pragma once

#include <Eigen/Dense>
#include <cmath>

namespace shift::nn {

/// Dense row-wise kernels over Eigen matrices. Everything here is pure and
/// works on expressions; the autodiff tape records these as its forward
/// passes and derives the matching pulls in its backward closures.

inline constexpr double kLayerNormEps = 1e-5;

template <typename Derived>
auto softmax_rows(const Eigen::MatrixBase<Derived>& x) {
  using Scalar = typename Derived::Scalar;
  using Mat = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;
  Mat shifted = x.colwise() - x.rowwise().maxCoeff();
  Mat e = shifted.array().exp().matrix();
  Eigen::Matrix<Scalar, Eigen::Dynamic, 1> sums = e.rowwise().sum();
  return Mat(e.array().colwise() / sums.array());
}

template <typename Derived>
auto log_softmax_rows(const Eigen::MatrixBase<Derived>& x) {
  using Scalar = typename Derived::Scalar;
  using Mat = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;
  Mat shifted = x.colwise() - x.rowwise().maxCoeff();
  Eigen::Matrix<Scalar, Eigen::Dynamic, 1> lse =
      shifted.array().exp().rowwise().sum().log();
  return Mat(shifted.colwise() - lse);
}

template <typename Scalar>
Scalar gelu_scalar(Scalar x) {
  return Scalar(0.5) * x * (Scalar(1) + std::erf(x * Scalar(0.7071067811865476)));
}

template <typename Scalar>
Scalar gelu_grad_scalar(Scalar x) {
  Scalar phi = std::exp(Scalar(-0.5) * x * x) * Scalar(0.3989422804014327);
  Scalar cdf = Scalar(0.5) * (Scalar(1) + std::erf(x * Scalar(0.7071067811865476)));
  return cdf + x * phi;
}

template <typename Derived>
auto gelu(const Eigen::MatrixBase<Derived>& x) {
  using Scalar = typename Derived::Scalar;
  using Mat = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;
  return Mat(x.unaryExpr([](Scalar v) { return gelu_scalar(v); }));
}

/// Per-row standardization: rows with zero variance map to the zero vector
/// (before gain/bias).
template <typename Derived>
auto standardize_rows(const Eigen::MatrixBase<Derived>& x) {
  using Scalar = typename Derived::Scalar;
  using Mat = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;
  Eigen::Matrix<Scalar, Eigen::Dynamic, 1> mean = x.rowwise().mean();
  Mat centered = x.colwise() - mean;
  Eigen::Matrix<Scalar, Eigen::Dynamic, 1> var =
      centered.array().square().rowwise().mean();
  Eigen::Matrix<Scalar, Eigen::Dynamic, 1> inv_sigma =
      (var.array() + Scalar(kLayerNormEps)).rsqrt();
  return Mat(centered.array().colwise() * inv_sigma.array());
}

/// Sinusoidal position table, rows = positions, cols = model width.
template <typename Scalar = double>
Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic> sinusoidal_positions(
    Eigen::Index max_len, Eigen::Index width) {
  Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic> table(max_len, width);
  for (Eigen::Index pos = 0; pos < max_len; ++pos) {
    for (Eigen::Index i = 0; i < width; ++i) {
      Scalar exponent = Scalar(2 * (i / 2)) / Scalar(width);
      Scalar angle = Scalar(pos) / std::pow(Scalar(10000), exponent);
      table(pos, i) = (i % 2 == 0) ? std::sin(angle) : std::cos(angle);
    }
  }
  return table;
}

}  // namespace shift::nn
