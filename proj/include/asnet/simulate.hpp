#ifndef ASNET_SIMULATE_HPP
#define ASNET_SIMULATE_HPP

#include "asnet/core.hpp"

#include <cstdint>
#include <filesystem>
#include <random>
#include <vector>

namespace asnet {

/// mt19937_64 with explicit bit-to-real conversions. The engine's output is
/// fixed by the standard, the std distributions are not, so generated datasets
/// stay byte-identical across standard libraries.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}
  /// Independent stream `stream` of `seed`.
  Rng(std::uint64_t seed, std::uint64_t stream);

  std::uint64_t next() { return engine_(); }
  /// Uniform in [lo, hi).
  double uniform(double lo = 0.0, double hi = 1.0);
  /// Uniform integer in [lo, hi] (inclusive).
  int uniform_int(int lo, int hi);
  double normal();

 private:
  std::mt19937_64 engine_;
};

template <typename T>
struct Range {
  T lo;
  T hi;
};

/// Random vessel-like phantom description. Sizes are in pixels.
struct PhantomConfig {
  Range<int> n_branches{2, 5};
  Range<double> width_px{1.5, 3.5};
  Range<int> n_discs{0, 2};
  Range<double> disc_radius_px{1.5, 4.0};
  Range<double> intensity{0.5, 1.0};
  std::uint64_t seed = 0;

  /// Throws ValidationError for empty or out-of-domain ranges.
  void validate() const;
  /// Same description with pixel sizes multiplied by `factor`.
  PhantomConfig scaled(double factor) const;
};

ImageGrid gen_phantom(const PhantomConfig& cfg, int n_grid, int index, double fov_m = 0.0);

/// Sampled transducer impulse response.
struct Wavelet {
  Eigen::VectorXd samples;
  int center_index = 0;

  int half_support() const { return center_index; }
  /// Linear interpolation at fractional offset `t` samples from the centre. The
  /// samples are taken to be bordered by zeros, so the result is continuous.
  double at(double t) const;
};

/// Gaussian-derivative pulse whose FWHM bandwidth equals frac_bandwidth * f_c.
Wavelet transducer_wavelet(const ArrayGeometry& geom);

/// Smallest record length that holds every pixel's full pulse.
int min_record_length(const ArrayGeometry& geom);

/// Analytic time-of-flight projection with 1/d spreading. Linear in the image.
RawSignalMatrix forward_project(const ImageGrid& img, const ArrayGeometry& geom, int m);

/// Keep every `stride`-th column starting at 0.
RawSignalMatrix subsample_sensors(const RawSignalMatrix& dense, int stride);

struct SimulationOptions {
  int dense_elements = 128;
  GroundTruth ground_truth = GroundTruth::phantom;
  /// Additive white noise, standard deviation relative to each sample's peak |signal|.
  double noise_std = 0.0;
};

DatasetManifest simulate_dataset(const PhantomConfig& cfg, const ArrayGeometry& geom, int n_samples,
                                 int m, const std::filesystem::path& out_dir, Split split,
                                 const SimulationOptions& options = {});

/// Builds sample i exactly as simulate_dataset does, without touching the disk.
Sample simulate_sample(const PhantomConfig& cfg, const ArrayGeometry& geom, int m, int index,
                       const SimulationOptions& options = {});

}  // namespace asnet

#endif  // ASNET_SIMULATE_HPP
