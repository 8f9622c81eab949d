#include "asnet/simulate.hpp"

#include "asnet/beamform.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include <fmt/core.h>

namespace asnet {

namespace {

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

}  // namespace

Rng::Rng(std::uint64_t seed, std::uint64_t stream)
    : engine_(splitmix64(seed ^ splitmix64(stream + 0x632BE59BD9B4E019ULL))) {}

double Rng::uniform(double lo, double hi) {
  const double u = static_cast<double>(next() >> 11) * 0x1.0p-53;
  return lo + (hi - lo) * u;
}

int Rng::uniform_int(int lo, int hi) {
  if (hi <= lo) return lo;
  const auto span = static_cast<std::uint64_t>(hi - lo) + 1;
  return lo + static_cast<int>(next() % span);
}

double Rng::normal() {
  // Box-Muller; u1 in (0, 1].
  const double u1 = 1.0 - uniform();
  const double u2 = uniform();
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

// ---------------------------------------------------------------------------
// Phantoms

void PhantomConfig::validate() const {
  auto check = [](auto r, const char* name, double min_lo) {
    if (r.hi < r.lo) throw ValidationError(fmt::format("phantom config: empty range for {}", name));
    if (r.lo < min_lo) throw ValidationError(fmt::format("phantom config: {} below {}", name, min_lo));
  };
  check(n_branches, "n_branches", 0);
  check(width_px, "width_px", 0.0);
  check(n_discs, "n_discs", 0);
  check(disc_radius_px, "disc_radius_px", 0.0);
  check(intensity, "intensity", 0.0);
  if (!(intensity.lo > 0.0) || intensity.hi > 1.0)
    throw ValidationError("phantom config: intensity range must lie in (0, 1]");
}

PhantomConfig PhantomConfig::scaled(double factor) const {
  PhantomConfig out = *this;
  out.width_px = {width_px.lo * factor, width_px.hi * factor};
  out.disc_radius_px = {disc_radius_px.lo * factor, disc_radius_px.hi * factor};
  return out;
}

namespace {

// Sets every pixel whose centre lies within `radius` of (x, y) to at least `value`.
// Coordinates are in pixel units with (0, 0) at the top-left corner of the grid.
void stamp_disc(RowMatrixXf& img, double x, double y, double radius, float value) {
  const int n = static_cast<int>(img.rows());
  const int r0 = std::max(0, static_cast<int>(std::floor(y - radius - 1)));
  const int r1 = std::min(n - 1, static_cast<int>(std::ceil(y + radius + 1)));
  const int c0 = std::max(0, static_cast<int>(std::floor(x - radius - 1)));
  const int c1 = std::min(n - 1, static_cast<int>(std::ceil(x + radius + 1)));
  const double r2 = radius * radius;
  for (int r = r0; r <= r1; ++r) {
    for (int c = c0; c <= c1; ++c) {
      const double dx = c + 0.5 - x;
      const double dy = r + 0.5 - y;
      if (dx * dx + dy * dy <= r2) img(r, c) = std::max(img(r, c), value);
    }
  }
}

}  // namespace

ImageGrid gen_phantom(const PhantomConfig& cfg, int n_grid, int index, double fov_m) {
  cfg.validate();
  Rng rng(cfg.seed, static_cast<std::uint64_t>(index));
  ImageGrid img;
  img.fov_m = fov_m;
  img.data.setZero(n_grid, n_grid);
  const double n = n_grid;

  const int branches = rng.uniform_int(cfg.n_branches.lo, cfg.n_branches.hi);
  for (int b = 0; b < branches; ++b) {
    Eigen::Vector2d p[3];
    for (auto& pt : p) pt = {rng.uniform(0.1 * n, 0.9 * n), rng.uniform(0.1 * n, 0.9 * n)};
    const double radius = std::max(0.5, 0.5 * rng.uniform(cfg.width_px.lo, cfg.width_px.hi));
    const auto value = static_cast<float>(rng.uniform(cfg.intensity.lo, cfg.intensity.hi));
    const double length = (p[1] - p[0]).norm() + (p[2] - p[1]).norm();
    const int steps = static_cast<int>(std::ceil(4.0 * length)) + 1;
    for (int s = 0; s <= steps; ++s) {
      const double t = static_cast<double>(s) / steps;
      const Eigen::Vector2d q =
          (1 - t) * (1 - t) * p[0] + 2 * (1 - t) * t * p[1] + t * t * p[2];
      stamp_disc(img.data, q.x(), q.y(), radius, value);
    }
  }

  const int discs = rng.uniform_int(cfg.n_discs.lo, cfg.n_discs.hi);
  for (int d = 0; d < discs; ++d) {
    const double x = rng.uniform(0.15 * n, 0.85 * n);
    const double y = rng.uniform(0.15 * n, 0.85 * n);
    const double radius = rng.uniform(cfg.disc_radius_px.lo, cfg.disc_radius_px.hi);
    const auto value = static_cast<float>(rng.uniform(cfg.intensity.lo, cfg.intensity.hi));
    stamp_disc(img.data, x, y, std::max(radius, 0.5), value);
  }

  if (img.data.maxCoeff() <= 0.0f) {
    stamp_disc(img.data, 0.5 * n, 0.5 * n, std::max(1.0, cfg.disc_radius_px.lo),
               static_cast<float>(cfg.intensity.hi));
  }
  return img;
}

// ---------------------------------------------------------------------------
// Transducer response and projection

double Wavelet::at(double t) const {
  const double u = t + center_index;
  const auto last = static_cast<Eigen::Index>(samples.size() - 1);
  if (!(u > -1.0 && u < static_cast<double>(last) + 1.0)) return 0.0;
  const double base = std::floor(u);
  const auto i0 = static_cast<Eigen::Index>(base);
  const double frac = u - base;
  const double a = i0 >= 0 ? samples[i0] : 0.0;
  const double b = i0 + 1 <= last ? samples[i0 + 1] : 0.0;
  return (1.0 - frac) * a + frac * b;
}

Wavelet transducer_wavelet(const ArrayGeometry& geom) {
  const double sigma_f =
      geom.frac_bandwidth * geom.center_freq_hz / (2.0 * std::sqrt(2.0 * std::numbers::ln2));
  const double sigma = 1.0 / (2.0 * std::numbers::pi * sigma_f);
  const int half = static_cast<int>(std::floor(4.0 * sigma * geom.fs_hz));
  Wavelet w;
  w.center_index = half;
  w.samples.resize(2 * half + 1);
  for (int k = -half; k <= half; ++k) {
    const double t = k / geom.fs_hz;
    w.samples[k + half] = -t * std::exp(-t * t / (2.0 * sigma * sigma));
  }
  const double peak = w.samples.cwiseAbs().maxCoeff();
  if (peak > 0.0) w.samples /= peak;
  return w;
}

int min_record_length(const ArrayGeometry& geom) {
  const int last = geom.n_grid - 1;
  double tau_max = 0.0;
  for (int r : {0, last}) {
    for (int c : {0, last}) {
      const Eigen::Vector2d x = geom.pixel_center(r, c);
      for (int j = 0; j < geom.n_elements; ++j)
        tau_max = std::max(tau_max, (x - geom.element_position(j)).norm() * geom.fs_hz / geom.speed_mps);
    }
  }
  const Wavelet w = transducer_wavelet(geom);
  return static_cast<int>(std::ceil(tau_max)) + w.half_support() + 1;
}

RawSignalMatrix forward_project(const ImageGrid& img, const ArrayGeometry& geom, int m) {
  if (img.side() != geom.n_grid || img.data.cols() != geom.n_grid)
    throw ShapeError(fmt::format("forward_project: image side {} != geometry n_grid {}", img.side(),
                                 geom.n_grid));
  const int m_min = min_record_length(geom);
  if (m < m_min)
    throw ValidationError(fmt::format(
        "forward_project: record length m = {} too small; minimum m for this geometry is {}", m,
        m_min));

  const Wavelet w = transducer_wavelet(geom);
  const int half = w.half_support();
  const double scale = geom.fs_hz / geom.speed_mps;
  const double d_min = geom.pixel_pitch();
  const int n_grid = geom.n_grid;

  RawSignalMatrix out;
  out.fs_hz = geom.fs_hz;
  out.data.setZero(m, geom.n_elements);
  Eigen::VectorXd column(m);
  for (int j = 0; j < geom.n_elements; ++j) {
    const Eigen::Vector2d e = geom.element_position(j);
    column.setZero();
    for (int r = 0; r < n_grid; ++r) {
      for (int c = 0; c < n_grid; ++c) {
        const double p = img.data(r, c);
        if (p == 0.0) continue;
        const double d = (geom.pixel_center(r, c) - e).norm();
        const double tau = d * scale;
        const double amp = p / std::max(d, d_min);
        const int t0 = std::max(0, static_cast<int>(std::ceil(tau)) - half - 1);
        const int t1 = std::min(m - 1, static_cast<int>(std::floor(tau)) + half + 1);
        for (int t = t0; t <= t1; ++t) column[t] += amp * w.at(t - tau);
      }
    }
    out.data.col(j) = column.cast<float>();
  }
  return out;
}

RawSignalMatrix subsample_sensors(const RawSignalMatrix& dense, int stride) {
  if (stride < 1 || dense.n() % stride != 0)
    throw ShapeError(fmt::format("cannot take every {}th of {} sensors", stride, dense.n()));
  RawSignalMatrix out;
  out.fs_hz = dense.fs_hz;
  out.data.resize(dense.m(), dense.n() / stride);
  for (int j = 0; j < out.n(); ++j) out.data.col(j) = dense.data.col(j * stride);
  return out;
}

// ---------------------------------------------------------------------------
// Datasets

Sample simulate_sample(const PhantomConfig& cfg, const ArrayGeometry& geom, int m, int index,
                       const SimulationOptions& options) {
  ImageGrid phantom = gen_phantom(cfg, geom.n_grid, index, geom.fov_m);
  RawSignalMatrix sparse;
  ImageGrid truth;
  if (options.ground_truth == GroundTruth::dense_das) {
    if (options.dense_elements % geom.n_elements != 0)
      throw ValidationError(fmt::format("dense element count {} is not a multiple of {}",
                                        options.dense_elements, geom.n_elements));
    ArrayGeometry dense_geom = geom;
    dense_geom.n_elements = options.dense_elements;
    const RawSignalMatrix dense = forward_project(phantom, dense_geom, m);
    sparse = subsample_sensors(dense, options.dense_elements / geom.n_elements);
    truth = normalize_minmax(das_reconstruct(dense, dense_geom));
  } else {
    sparse = forward_project(phantom, geom, m);
    truth = std::move(phantom);
  }
  if (options.noise_std > 0.0) {
    Rng noise(cfg.seed, 0x4E4F495345000000ULL + static_cast<std::uint64_t>(index));
    const double level = options.noise_std * sparse.data.cwiseAbs().maxCoeff();
    for (Eigen::Index i = 0; i < sparse.data.size(); ++i)
      sparse.data.data()[i] += static_cast<float>(level * noise.normal());
  }
  return {std::move(sparse), std::move(truth)};
}

DatasetManifest simulate_dataset(const PhantomConfig& cfg, const ArrayGeometry& geom, int n_samples,
                                 int m, const std::filesystem::path& out_dir, Split split,
                                 const SimulationOptions& options) {
  geom.validate();
  cfg.validate();
  DatasetManifest manifest;
  manifest.n_samples = n_samples;
  manifest.geometry = geom;
  manifest.signal_m = m;
  manifest.signal_n = geom.n_elements;
  manifest.image_side = geom.n_grid;
  manifest.seed = cfg.seed;
  manifest.split = split;
  manifest.ground_truth = options.ground_truth;

  DatasetWriter writer(out_dir, manifest);
  for (int i = 0; i < n_samples; ++i) writer.append(simulate_sample(cfg, geom, m, i, options));
  writer.finish();
  return manifest;
}

}  // namespace asnet
