#ifndef ASNET_METRICS_HPP
#define ASNET_METRICS_HPP

#include "asnet/core.hpp"

#include <cmath>
#include <limits>

#include <fmt/core.h>

namespace asnet {

inline constexpr double kSsimC1 = 0.01 * 0.01;
inline constexpr double kSsimC2 = 0.03 * 0.03;

namespace detail {

template <typename A, typename B>
void require_same_shape(const Eigen::DenseBase<A>& a, const Eigen::DenseBase<B>& b, const char* what) {
  if (a.rows() != b.rows() || a.cols() != b.cols())
    throw ShapeError(fmt::format("{}: shape ({}, {}) != ({}, {})", what, a.rows(), a.cols(), b.rows(),
                                 b.cols()));
}

}  // namespace detail

/// Single-window SSIM with population statistics. Inputs are assumed to have
/// unit dynamic range.
template <typename A, typename B>
double ssim(const Eigen::DenseBase<A>& y, const Eigen::DenseBase<B>& g) {
  detail::require_same_shape(y, g, "ssim");
  const Eigen::ArrayXXd ya = y.derived().template cast<double>();
  const Eigen::ArrayXXd ga = g.derived().template cast<double>();
  const double count = static_cast<double>(ya.size());
  const double mu_y = ya.sum() / count;
  const double mu_g = ga.sum() / count;
  const double var_y = (ya - mu_y).square().sum() / count;
  const double var_g = (ga - mu_g).square().sum() / count;
  const double cov = ((ya - mu_y) * (ga - mu_g)).sum() / count;
  return ((2.0 * mu_y * mu_g + kSsimC1) * (2.0 * cov + kSsimC2)) /
         ((mu_y * mu_y + mu_g * mu_g + kSsimC1) * (var_y + var_g + kSsimC2));
}

/// PSNR in dB with peak = max over both images. Identical inputs give +inf.
template <typename A, typename B>
double psnr(const Eigen::DenseBase<A>& y, const Eigen::DenseBase<B>& g) {
  detail::require_same_shape(y, g, "psnr");
  const Eigen::ArrayXXd ya = y.derived().template cast<double>();
  const Eigen::ArrayXXd ga = g.derived().template cast<double>();
  const double mse = (ya - ga).square().sum() / static_cast<double>(ya.size());
  if (mse == 0.0) return std::numeric_limits<double>::infinity();
  const double peak = std::max(ya.maxCoeff(), ga.maxCoeff());
  return 10.0 * std::log10(peak * peak / mse);
}

template <typename Scalar>
Scalar smooth_l1_point(Scalar x) {
  const Scalar ax = std::abs(x);
  return ax < Scalar(1) ? Scalar(0.5) * x * x : ax - Scalar(0.5);
}

/// d/dx of smooth_l1_point.
template <typename Scalar>
Scalar smooth_l1_slope(Scalar x) {
  if (x >= Scalar(1)) return Scalar(1);
  if (x <= Scalar(-1)) return Scalar(-1);
  return x;
}

/// Mean smooth-L1 of the elementwise residual a - b.
template <typename A, typename B>
double smooth_l1(const Eigen::DenseBase<A>& a, const Eigen::DenseBase<B>& b) {
  detail::require_same_shape(a, b, "smooth_l1");
  const auto diff = (a.derived().template cast<double>().array() - b.derived().template cast<double>().array()).eval();
  double acc = 0.0;
  for (Eigen::Index i = 0; i < diff.size(); ++i) acc += smooth_l1_point(diff.data()[i]);
  return acc / static_cast<double>(diff.size());
}

/// Gradient of smooth_l1(a, b) with respect to a.
template <typename A, typename B>
Eigen::ArrayXXd smooth_l1_grad(const Eigen::DenseBase<A>& a, const Eigen::DenseBase<B>& b) {
  detail::require_same_shape(a, b, "smooth_l1_grad");
  Eigen::ArrayXXd diff = a.derived().template cast<double>().array() - b.derived().template cast<double>().array();
  const double inv = 1.0 / static_cast<double>(diff.size());
  return diff.unaryExpr([inv](double x) { return smooth_l1_slope(x) * inv; });
}

inline double ssim(const ImageGrid& y, const ImageGrid& g) { return ssim(y.data, g.data); }
inline double psnr(const ImageGrid& y, const ImageGrid& g) { return psnr(y.data, g.data); }

}  // namespace asnet

#endif  // ASNET_METRICS_HPP
