#include "asnet/fold.hpp"

#include <json.hpp>

#include <fmt/core.h>

namespace asnet {

int q_of(int m, int side) {
  if (m < 1 || side < 1) throw ShapeError(fmt::format("q_of: m = {} and side = {} must be >= 1", m, side));
  return (m + side - 1) / side;
}

FoldedTensor fold(const RawSignalMatrix& s, int side, bool pad_sensors_to_side) {
  const int m = s.m();
  const int n = s.n();
  if (m < 1 || n < 1) throw ShapeError("fold: empty signal");
  if (n > side)
    throw ShapeError(fmt::format("fold: {} sensors exceed the folded side {}", n, side));
  if (!pad_sensors_to_side && n != side)
    throw ShapeError(fmt::format("fold: {} sensors != side {} and sensor padding is disabled", n, side));

  FoldedTensor f;
  f.side = side;
  f.q = q_of(m, side);
  f.pad_time = f.q * side - m;
  f.pad_sensors = side - n;
  f.data.setZero(static_cast<Eigen::Index>(f.q) * side * side);
  for (int t = 0; t < m; ++t) {
    const int k = t % f.q;
    const int i = t / f.q;
    for (int j = 0; j < n; ++j) f.at(k, i, j) = s.data(t, j);
  }
  return f;
}

RawSignalMatrix unfold(const FoldedTensor& f, int m_original, int n_original, double fs_hz) {
  const int side = f.side;
  if (side < 1 || f.q < 1 || f.data.size() != static_cast<Eigen::Index>(f.q) * side * side)
    throw ShapeError("unfold: folded tensor storage does not match its (q, side)");
  if (m_original < 1 || n_original < 1 || n_original > side || q_of(m_original, side) != f.q)
    throw ShapeError(fmt::format("unfold: ({}, {}) is not a fold source for q = {}, side = {}",
                                 m_original, n_original, f.q, side));
  if (f.pad_time != f.q * side - m_original || f.pad_sensors != side - n_original)
    throw ShapeError(fmt::format(
        "unfold: recorded padding (time {}, sensors {}) disagrees with ({}, {})", f.pad_time,
        f.pad_sensors, m_original, n_original));

  for (int t = m_original; t < f.q * side; ++t) {
    for (int j = 0; j < side; ++j) {
      if (f.at(t % f.q, t / f.q, j) != 0.0f)
        throw ValidationError(fmt::format("unfold: nonzero value in time padding at t = {}, j = {}", t, j));
    }
  }
  for (int k = 0; k < f.q; ++k) {
    for (int i = 0; i < side; ++i) {
      for (int j = n_original; j < side; ++j) {
        if (f.at(k, i, j) != 0.0f)
          throw ValidationError(
              fmt::format("unfold: nonzero value in sensor padding at ({}, {}, {})", k, i, j));
      }
    }
  }

  RawSignalMatrix s;
  s.fs_hz = fs_hz;
  s.data.resize(m_original, n_original);
  for (int t = 0; t < m_original; ++t) {
    for (int j = 0; j < n_original; ++j) s.data(t, j) = f.at(t % f.q, t / f.q, j);
  }
  return s;
}

std::string fold_sidecar_json(const FoldedTensor& f, int m_original, int n_original) {
  nlohmann::json j;
  j["q"] = f.q;
  j["side"] = f.side;
  j["pad_time"] = f.pad_time;
  j["pad_sensors"] = f.pad_sensors;
  j["m_original"] = m_original;
  j["n_original"] = n_original;
  j["layout"] = "channel-major float32 little-endian, index (k*side + i)*side + j";
  return j.dump(2) + "\n";
}

}  // namespace asnet
