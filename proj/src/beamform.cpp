#include "asnet/beamform.hpp"

#include <cmath>

#include <fmt/core.h>

namespace asnet {

double delay_index(const Eigen::Vector2d& pixel_xy, int element, const ArrayGeometry& geom) {
  const double d = (pixel_xy - geom.element_position(element)).norm();
  return d * geom.fs_hz / geom.speed_mps;
}

RawSignalMatrix integrate_channels(const RawSignalMatrix& s) {
  RawSignalMatrix out;
  out.fs_hz = s.fs_hz;
  out.data.resize(s.m(), s.n());
  for (int j = 0; j < s.n(); ++j) {
    double acc = 0.0;
    for (int t = 0; t < s.m(); ++t) {
      acc += s.data(t, j);
      out.data(t, j) = static_cast<float>(acc);
    }
  }
  return out;
}

ImageGrid das_reconstruct(const RawSignalMatrix& s, const ArrayGeometry& geom,
                          const DasOptions& options) {
  if (s.n() != geom.n_elements)
    throw ShapeError(fmt::format("das: signal has {} sensors, geometry has {} elements", s.n(),
                                 geom.n_elements));
  if (s.fs_hz != geom.fs_hz)
    throw ShapeError(fmt::format("das: signal fs {} Hz != geometry fs {} Hz", s.fs_hz, geom.fs_hz));

  const RawSignalMatrix traces = options.integrate ? integrate_channels(s) : s;
  const int m = traces.m();
  const int n_grid = geom.n_grid;
  const double scale = geom.fs_hz / geom.speed_mps;

  std::vector<Eigen::Vector2d> elements(geom.n_elements);
  for (int j = 0; j < geom.n_elements; ++j) elements[j] = geom.element_position(j);

  ImageGrid img;
  img.fov_m = geom.fov_m;
  img.data.setZero(n_grid, n_grid);
  for (int r = 0; r < n_grid; ++r) {
    for (int c = 0; c < n_grid; ++c) {
      const Eigen::Vector2d x = geom.pixel_center(r, c);
      double acc = 0.0;
      for (int j = 0; j < geom.n_elements; ++j) {
        const double tau = (x - elements[j]).norm() * scale;
        const double base = std::floor(tau);
        const auto i0 = static_cast<long>(base);
        if (i0 < 0 || i0 + 1 >= m) continue;
        const double frac = tau - base;
        acc += (1.0 - frac) * traces.data(i0, j) + frac * traces.data(i0 + 1, j);
      }
      img.data(r, c) = static_cast<float>(acc);
    }
  }
  return img;
}

ImageGrid normalize_minmax(const ImageGrid& img) {
  ImageGrid out;
  out.fov_m = img.fov_m;
  out.data.setZero(img.data.rows(), img.data.cols());
  if (img.data.size() == 0) return out;
  const double lo = img.data.minCoeff();
  const double hi = img.data.maxCoeff();
  if (!(hi > lo)) return out;
  out.data = ((img.data.array().cast<double>() - lo) / (hi - lo)).cast<float>().matrix();
  return out;
}

}  // namespace asnet
