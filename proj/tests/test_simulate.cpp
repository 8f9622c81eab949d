#include "asnet/core.hpp"
#include "asnet/simulate.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>

namespace fs = std::filesystem;
using namespace asnet;

namespace {

ArrayGeometry geometry(int elements, int grid) {
  return make_geometry(elements, 0.018, 0.0127, grid, 1500.0, 40e6, 5e6, 0.8);
}

ImageGrid point_image(int side, int row, int col, float value = 1.0f) {
  ImageGrid img;
  img.data = RowMatrixXf::Zero(side, side);
  img.data(row, col) = value;
  img.fov_m = 0.0127;
  return img;
}

std::string slurp(const fs::path& p) { return read_text(p); }

}  // namespace

TEST(Wavelet, SupportLengthFromFormula) {
  const double sigma_f = 0.8 * 5e6 / (2.0 * std::sqrt(2.0 * std::log(2.0)));
  const double sigma = 1.0 / (2.0 * M_PI * sigma_f);
  const int half = static_cast<int>(4.0 * sigma * 40e6);
  const Wavelet w = transducer_wavelet(geometry(32, 128));
  EXPECT_EQ(half, 14);
  EXPECT_EQ(w.samples.size(), 2 * half + 1);
  EXPECT_EQ(w.center_index, half);
}

TEST(Wavelet, OddZeroMeanUnitPeak) {
  const Wavelet w = transducer_wavelet(geometry(32, 128));
  const int h = w.center_index;
  for (int k = 0; k <= h; ++k) EXPECT_EQ(w.samples[h + k], -w.samples[h - k]);
  EXPECT_LT(std::abs(w.samples.sum()), 1e-6);
  EXPECT_DOUBLE_EQ(w.samples.cwiseAbs().maxCoeff(), 1.0);
  EXPECT_EQ(w.at(0.0), 0.0);
  EXPECT_EQ(w.at(h + 1.0), 0.0);
}

TEST(Phantom, DeterministicAndInRange) {
  PhantomConfig cfg;
  cfg.seed = 42;
  for (int i = 0; i < 20; ++i) {
    const ImageGrid a = gen_phantom(cfg, 64, i);
    const ImageGrid b = gen_phantom(cfg, 64, i);
    EXPECT_EQ(a.data, b.data);
    EXPECT_GE(a.data.minCoeff(), 0.0f);
    EXPECT_LE(a.data.maxCoeff(), 1.0f);
    EXPECT_GT(a.data.maxCoeff(), 0.0f);
  }
  EXPECT_NE(gen_phantom(cfg, 64, 0).data, gen_phantom(cfg, 64, 1).data);
}

TEST(Phantom, SingleDiscFromConfig) {
  PhantomConfig cfg;
  cfg.n_branches = {0, 0};
  cfg.n_discs = {1, 1};
  cfg.width_px = {1.0, 1.0};
  cfg.disc_radius_px = {3.0, 3.0};
  cfg.intensity = {1.0, 1.0};
  const ImageGrid img = gen_phantom(cfg, 64, 0);
  // A radius-3 disc on the pixel grid covers between 25 and 37 pixel centres depending on its offset.
  const int support = static_cast<int>((img.data.array() > 0.0f).count());
  EXPECT_GE(support, 25);
  EXPECT_LE(support, 37);
  EXPECT_EQ(img.data.maxCoeff(), 1.0f);
}

TEST(Phantom, RejectsEmptyRange) {
  PhantomConfig cfg;
  cfg.n_branches = {3, 2};
  EXPECT_THROW(cfg.validate(), ValidationError);
}

TEST(Forward, ZeroImageGivesZeroSignal) {
  const ArrayGeometry g = geometry(32, 64);
  ImageGrid img;
  img.data = RowMatrixXf::Zero(64, 64);
  EXPECT_EQ(forward_project(img, g, 768).data.cwiseAbs().maxCoeff(), 0.0f);
}

TEST(Forward, Linear) {
  const ArrayGeometry g = geometry(32, 64);
  PhantomConfig cfg;
  cfg.seed = 9;
  const ImageGrid x = gen_phantom(cfg, 64, 0);
  const ImageGrid y = gen_phantom(cfg, 64, 1);
  ImageGrid mix;
  mix.data = 0.7f * x.data + 1.9f * y.data;
  const RowMatrixXf lhs = forward_project(mix, g, 768).data;
  const RowMatrixXf rhs = 0.7f * forward_project(x, g, 768).data + 1.9f * forward_project(y, g, 768).data;
  EXPECT_LT((lhs - rhs).norm() / rhs.norm(), 1e-5);
}

TEST(Forward, CentreSourceCrossesZeroAtTimeOfFlight) {
  // Odd grid so a pixel sits exactly at the ring centre.
  const ArrayGeometry g = geometry(32, 65);
  const RawSignalMatrix s = forward_project(point_image(65, 32, 32), g, 768);
  const int tof = static_cast<int>(std::lround(0.018 / 1500.0 * 40e6));
  ASSERT_EQ(tof, 480);
  for (int j = 0; j < s.n(); ++j) {
    EXPECT_LT(std::abs(s.data(tof, j)), 1e-6f * s.data.col(j).cwiseAbs().maxCoeff());
    EXPECT_LT(s.data(tof - 1, j) * s.data(tof + 1, j), 0.0f);
    EXPECT_LT((s.data.col(j) - s.data.col(0)).cwiseAbs().maxCoeff(), 1e-5f * s.data.col(0).cwiseAbs().maxCoeff());
  }
}

TEST(Forward, PeakNearAnalyticDelay) {
  const ArrayGeometry g = geometry(32, 64);
  const int half = transducer_wavelet(g).center_index;
  Rng rng(17);
  for (int trial = 0; trial < 10; ++trial) {
    const int r = rng.uniform_int(0, 63);
    const int c = rng.uniform_int(0, 63);
    const RawSignalMatrix s = forward_project(point_image(64, r, c), g, 768);
    for (int j = 0; j < s.n(); ++j) {
      Eigen::Index peak;
      s.data.col(j).cwiseAbs().maxCoeff(&peak);
      const double delay = (g.pixel_center(r, c) - g.element_position(j)).norm() * g.fs_hz / g.speed_mps;
      EXPECT_LE(std::abs(peak - delay), half + 1.0);
    }
  }
}

TEST(Forward, QuarterTurnPermutesChannels) {
  const int n = 32;
  const ArrayGeometry g = geometry(4, n);
  PhantomConfig cfg;
  cfg.seed = 4;
  const ImageGrid img = gen_phantom(cfg, n, 0);
  ImageGrid rot;
  rot.data = RowMatrixXf::Zero(n, n);
  for (int r = 0; r < n; ++r)
    for (int c = 0; c < n; ++c) rot.data(n - 1 - c, r) = img.data(r, c);
  const RawSignalMatrix a = forward_project(img, g, 768);
  const RawSignalMatrix b = forward_project(rot, g, 768);
  for (int k = 0; k < 4; ++k) {
    const auto expected = a.data.col((k + 3) % 4);
    EXPECT_LT((b.data.col(k) - expected).norm(), 1e-3 * expected.norm()) << "channel " << k;
  }
}

TEST(Forward, ShortRecordNamesMinimum) {
  const ArrayGeometry g = geometry(32, 64);
  const int minimum = min_record_length(g);
  try {
    forward_project(point_image(64, 0, 0), g, minimum - 1);
    FAIL() << "expected ValidationError";
  } catch (const ValidationError& e) {
    EXPECT_NE(std::string(e.what()).find(std::to_string(minimum)), std::string::npos);
  }
  EXPECT_NO_THROW(forward_project(point_image(64, 0, 0), g, minimum));
}

TEST(SimulateDataset, PaperShapeAndDeterminism) {
  const fs::path a = fs::temp_directory_path() / "asnet_sim_a";
  const fs::path b = fs::temp_directory_path() / "asnet_sim_b";
  fs::remove_all(a);
  fs::remove_all(b);
  PhantomConfig cfg;
  cfg.seed = 7;
  const ArrayGeometry g = geometry(32, 64);
  simulate_dataset(cfg, g, 4, 2560, a, Split::train);
  simulate_dataset(cfg, g, 4, 2560, b, Split::train);
  const DatasetReader reader(a);
  EXPECT_EQ(reader.size(), 4);
  EXPECT_EQ(reader.signal(3).m(), 2560);
  EXPECT_EQ(reader.signal(3).n(), 32);
  for (const auto& e : fs::directory_iterator(a)) EXPECT_EQ(slurp(e.path()), slurp(b / e.path().filename()));
}

TEST(SimulateDataset, ZeroSamplesWritesManifestOnly) {
  const fs::path dir = fs::temp_directory_path() / "asnet_sim_empty";
  fs::remove_all(dir);
  PhantomConfig cfg;
  simulate_dataset(cfg, geometry(32, 64), 0, 768, dir, Split::test);
  EXPECT_EQ(std::distance(fs::directory_iterator(dir), fs::directory_iterator{}), 1);
  EXPECT_EQ(DatasetReader(dir).manifest().split, Split::test);
}

TEST(SimulateDataset, DenseDasTargetsAreNormalised) {
  const fs::path dir = fs::temp_directory_path() / "asnet_sim_dense";
  fs::remove_all(dir);
  PhantomConfig cfg;
  SimulationOptions opts;
  opts.ground_truth = GroundTruth::dense_das;
  simulate_dataset(cfg, geometry(32, 64), 2, 768, dir, Split::train, opts);
  const DatasetReader reader(dir);
  EXPECT_EQ(reader.manifest().ground_truth, GroundTruth::dense_das);
  const ImageGrid img = reader.image(0);
  EXPECT_FLOAT_EQ(img.data.minCoeff(), 0.0f);
  EXPECT_FLOAT_EQ(img.data.maxCoeff(), 1.0f);
}
