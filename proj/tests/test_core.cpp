#include "asnet/core.hpp"
#include "asnet/simulate.hpp"

#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>

namespace fs = std::filesystem;
using namespace asnet;

namespace {

fs::path scratch(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / ("asnet_core_" + name);
  fs::remove_all(dir);
  return dir;
}

ArrayGeometry full_scale_geometry() { return make_geometry(32, 0.018, 0.0127, 128, 1500.0, 40e6, 5e6, 0.8); }

DatasetManifest manifest_for(const ArrayGeometry& g, int n, int m) {
  DatasetManifest man;
  man.n_samples = n;
  man.geometry = g;
  man.signal_m = m;
  man.signal_n = g.n_elements;
  man.image_side = g.n_grid;
  man.seed = 11;
  return man;
}

Sample random_sample(int m, int n, int side, Rng& rng) {
  Sample s;
  s.first.data = RowMatrixXf(m, n);
  s.first.fs_hz = 40e6;
  for (Eigen::Index i = 0; i < s.first.data.size(); ++i) s.first.data.data()[i] = float(rng.uniform(-1, 1));
  s.second.data = RowMatrixXf(side, side);
  for (Eigen::Index i = 0; i < s.second.data.size(); ++i) s.second.data.data()[i] = float(rng.uniform());
  s.second.fov_m = 0.0127;
  return s;
}

}  // namespace

TEST(Geometry, ElementZeroOnPositiveX) {
  const ArrayGeometry g = full_scale_geometry();
  EXPECT_DOUBLE_EQ(g.element_position(0).x(), 0.018);
  EXPECT_DOUBLE_EQ(g.element_position(0).y(), 0.0);
}

TEST(Geometry, FourElementsAtQuarterTurns) {
  const ArrayGeometry g = make_geometry(4, 0.018, 0.0127, 64, 1500.0, 40e6, 5e6, 0.8);
  const Eigen::Vector2d expected[4] = {{0.018, 0}, {0, 0.018}, {-0.018, 0}, {0, -0.018}};
  for (int k = 0; k < 4; ++k) EXPECT_LT((g.element_position(k) - expected[k]).norm(), 1e-15);
}

TEST(Geometry, FovMustFitInsideRing) {
  EXPECT_THROW(make_geometry(32, 0.018, 0.036, 128, 1500.0, 40e6, 5e6, 0.8), GeometryError);
  EXPECT_THROW(make_geometry(0, 0.018, 0.0127, 128, 1500.0, 40e6, 5e6, 0.8), GeometryError);
}

TEST(Geometry, PixelCentresSymmetric) {
  const ArrayGeometry g = full_scale_geometry();
  const Eigen::Vector2d tl = g.pixel_center(0, 0);
  const Eigen::Vector2d br = g.pixel_center(127, 127);
  EXPECT_NEAR(tl.x(), -br.x(), 1e-15);
  EXPECT_NEAR(tl.y(), -br.y(), 1e-15);
  EXPECT_GT(tl.y(), 0.0);
}

TEST(Geometry, JsonRoundTrip) {
  const ArrayGeometry g = full_scale_geometry();
  EXPECT_EQ(geometry_from_json(geometry_to_json(g)), g);
}

TEST(Dataset, EmptyDatasetHasOnlyManifest) {
  const fs::path dir = scratch("empty");
  write_dataset(dir, manifest_for(full_scale_geometry(), 0, 2560), {});
  int files = 0;
  for (const auto& e : fs::directory_iterator(dir)) {
    ++files;
    EXPECT_EQ(e.path().filename(), "manifest.json");
  }
  EXPECT_EQ(files, 1);
}

TEST(Dataset, FileCountAndSizes) {
  const fs::path dir = scratch("sizes");
  Rng rng(3);
  std::vector<Sample> samples;
  for (int i = 0; i < 2; ++i) samples.push_back(random_sample(2560, 32, 128, rng));
  write_dataset(dir, manifest_for(full_scale_geometry(), 2, 2560), samples);
  int files = 0;
  for (const auto& e : fs::directory_iterator(dir)) {
    ++files;
    if (e.path().filename().string().rfind("sig_", 0) == 0) {
      EXPECT_EQ(fs::file_size(e.path()), 327680u);
    }
  }
  EXPECT_EQ(files, 5);
}

TEST(Dataset, RoundTripBitIdentical) {
  const fs::path dir = scratch("roundtrip");
  Rng rng(5);
  std::vector<Sample> samples;
  for (int i = 0; i < 3; ++i) samples.push_back(random_sample(300, 32, 128, rng));
  const DatasetManifest man = manifest_for(full_scale_geometry(), 3, 300);
  write_dataset(dir, man, samples);
  const DatasetReader reader(dir);
  EXPECT_EQ(reader.size(), 3);
  EXPECT_EQ(reader.manifest().geometry, man.geometry);
  for (int i = 0; i < 3; ++i) {
    const Sample s = reader.sample(i);
    EXPECT_EQ(s.first.data, samples[i].first.data);
    EXPECT_EQ(s.second.data, samples[i].second.data);
  }
}

TEST(Dataset, TruncatedSignalReportsDeficit) {
  const fs::path dir = scratch("truncated");
  Rng rng(6);
  write_dataset(dir, manifest_for(full_scale_geometry(), 1, 100), {random_sample(100, 32, 128, rng)});
  fs::resize_file(dir / sample_signal_name(0), 100 * 32 * 4 - 8);
  try {
    const DatasetReader reader(dir);
    reader.signal(0);
    FAIL() << "expected FormatError";
  } catch (const FormatError& e) {
    EXPECT_NE(std::string(e.what()).find("deficit 8 bytes"), std::string::npos) << e.what();
  }
}

TEST(Dataset, MissingPairIsValidationError) {
  const fs::path dir = scratch("missing");
  Rng rng(7);
  std::vector<Sample> samples{random_sample(100, 32, 128, rng), random_sample(100, 32, 128, rng)};
  write_dataset(dir, manifest_for(full_scale_geometry(), 2, 100), samples);
  DatasetManifest man = manifest_for(full_scale_geometry(), 3, 100);
  write_text(dir / "manifest.json", manifest_to_json(man));
  EXPECT_THROW(DatasetReader{dir}, ValidationError);
}

TEST(Dataset, RejectsMismatchedSampleShape) {
  const fs::path dir = scratch("badshape");
  Rng rng(8);
  EXPECT_THROW(write_dataset(dir, manifest_for(full_scale_geometry(), 1, 100), {random_sample(99, 32, 128, rng)}),
               ValidationError);
}

TEST(Pgm, HandEvaluatedBytes) {
  ImageGrid img;
  img.data = RowMatrixXf(2, 2);
  img.data << 0.0f, 1.0f, 0.5f, 0.25f;
  const std::vector<std::uint8_t> bytes = encode_pgm(img);
  const std::string header = "P5\n2 2\n255\n";
  ASSERT_EQ(bytes.size(), header.size() + 4);
  EXPECT_EQ(std::string(bytes.begin(), bytes.begin() + header.size()), header);
  const std::vector<std::uint8_t> payload(bytes.begin() + header.size(), bytes.end());
  EXPECT_EQ(payload, (std::vector<std::uint8_t>{0, 255, 128, 64}));
}

TEST(Pgm, ConstantImageIsZero) {
  ImageGrid img;
  img.data = RowMatrixXf::Constant(3, 3, 0.7f);
  const auto bytes = encode_pgm(img);
  for (std::size_t i = bytes.size() - 9; i < bytes.size(); ++i) EXPECT_EQ(bytes[i], 0);
}

TEST(Pgm, FullSizeHeader) {
  ImageGrid img;
  img.data = RowMatrixXf::Random(128, 128);
  const auto bytes = encode_pgm(img);
  const std::string header = "P5\n128 128\n255\n";
  EXPECT_EQ(bytes.size(), header.size() + 16384);
  EXPECT_EQ(std::string(bytes.begin(), bytes.begin() + header.size()), header);
}

TEST(BinaryIo, ReadWithWrongCountFails) {
  const fs::path dir = scratch("io");
  fs::create_directories(dir);
  const std::vector<float> v{1.0f, 2.0f, 3.0f};
  write_f32(dir / "v.f32", v.data(), v.size());
  EXPECT_EQ(read_f32(dir / "v.f32"), v);
  EXPECT_THROW(read_f32(dir / "v.f32", 4), FormatError);
  EXPECT_THROW(read_f32(dir / "absent.f32"), IoError);
}

TEST(Manifest, RejectsUnknownKeys) {
  DatasetManifest man = manifest_for(full_scale_geometry(), 1, 10);
  std::string text = manifest_to_json(man);
  EXPECT_EQ(manifest_from_json(text).n_samples, 1);
  text.insert(text.find('{') + 1, "\"extra\": 1,");
  EXPECT_THROW(manifest_from_json(text), FormatError);
}
