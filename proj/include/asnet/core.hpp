#ifndef ASNET_CORE_HPP
#define ASNET_CORE_HPP

#include <Eigen/Core>

#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace asnet {

using RowMatrixXf = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using RowMatrixXd = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

// Error hierarchy. Every failure surfaced by the library is one of these.
struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct ShapeError : Error {
  using Error::Error;
};
struct FormatError : Error {
  using Error::Error;
};
struct ValidationError : Error {
  using Error::Error;
};
struct IoError : Error {
  using Error::Error;
};
struct GeometryError : Error {
  using Error::Error;
};

/// Ring transducer array plus the square imaging grid it surrounds.
///
/// Element k sits at angle 2*pi*k/n_elements (counterclockwise, element 0 on
/// +x). The imaging square of side fov_m is centred on the ring centre and
/// sampled with n_grid pixels per side. Use make_geometry() to obtain a
/// validated instance.
struct ArrayGeometry {
  int n_elements = 0;
  double radius_m = 0.0;
  double speed_mps = 0.0;
  double fs_hz = 0.0;
  double fov_m = 0.0;
  int n_grid = 0;
  double center_freq_hz = 0.0;
  double frac_bandwidth = 0.0;

  double pixel_pitch() const { return fov_m / n_grid; }
  Eigen::Vector2d element_position(int k) const;
  /// Physical centre of pixel (row, col); row 0 is the top (largest y).
  Eigen::Vector2d pixel_center(int row, int col) const;

  /// Throws GeometryError naming the first violated constraint.
  void validate() const;

  bool operator==(const ArrayGeometry&) const = default;
};

ArrayGeometry make_geometry(int n_elements, double radius_m, double fov_m, int n_grid,
                            double speed_mps, double fs_hz, double center_freq_hz,
                            double frac_bandwidth);

/// Time x sensor signal: row = time sample, column = sensor.
struct RawSignalMatrix {
  RowMatrixXf data;
  double fs_hz = 0.0;

  int m() const { return static_cast<int>(data.rows()); }
  int n() const { return static_cast<int>(data.cols()); }
};

/// Folded signal cube, channel-major: data[(k*side + i)*side + j].
struct FoldedTensor {
  Eigen::VectorXf data;
  int q = 0;
  int side = 0;
  int pad_time = 0;
  int pad_sensors = 0;

  float& at(int k, int i, int j) { return data[(static_cast<Eigen::Index>(k) * side + i) * side + j]; }
  float at(int k, int i, int j) const {
    return data[(static_cast<Eigen::Index>(k) * side + i) * side + j];
  }
};

/// Square image, row-major, row 0 = topmost physical row.
struct ImageGrid {
  RowMatrixXf data;
  double fov_m = 0.0;

  int side() const { return static_cast<int>(data.rows()); }
};

enum class Split { train, test };

std::string to_string(Split split);
Split split_from_string(const std::string& s);

enum class GroundTruth { phantom, dense_das };

std::string to_string(GroundTruth gt);
GroundTruth ground_truth_from_string(const std::string& s);

struct DatasetManifest {
  int version = 1;
  int n_samples = 0;
  ArrayGeometry geometry;
  int signal_m = 0;
  int signal_n = 0;
  int image_side = 0;
  std::uint64_t seed = 0;
  Split split = Split::train;
  GroundTruth ground_truth = GroundTruth::phantom;
};

using Sample = std::pair<RawSignalMatrix, ImageGrid>;

std::string sample_signal_name(int index);
std::string sample_image_name(int index);

void write_dataset(const std::filesystem::path& dir, const DatasetManifest& manifest,
                   const std::vector<Sample>& samples);

/// Streaming counterpart of write_dataset: samples are validated and written
/// one at a time, the manifest is written by finish().
class DatasetWriter {
 public:
  DatasetWriter(std::filesystem::path dir, DatasetManifest manifest);

  void append(const Sample& sample);
  /// Throws ValidationError if fewer samples than declared were appended.
  void finish();

 private:
  std::filesystem::path dir_;
  DatasetManifest manifest_;
  int written_ = 0;
};

/// Lazy reader over a dataset directory. Opening validates the manifest and
/// the presence and size of every sample file; samples are loaded on demand.
class DatasetReader {
 public:
  explicit DatasetReader(std::filesystem::path dir);

  const DatasetManifest& manifest() const { return manifest_; }
  int size() const { return manifest_.n_samples; }
  Sample sample(int index) const;
  RawSignalMatrix signal(int index) const;
  ImageGrid image(int index) const;

 private:
  std::filesystem::path dir_;
  DatasetManifest manifest_;
};

// Raw binary32 little-endian arrays.
void write_f32(const std::filesystem::path& path, const float* values, std::size_t count);
std::vector<float> read_f32(const std::filesystem::path& path, std::size_t expected_count);
std::vector<float> read_f32(const std::filesystem::path& path);

RawSignalMatrix read_signal(const std::filesystem::path& path, int m, int n, double fs_hz);
ImageGrid read_image(const std::filesystem::path& path, int side, double fov_m);
void write_image(const std::filesystem::path& path, const ImageGrid& img);

/// Binary PGM (P5, maxval 255) with min-max scaling; a constant image maps to zeros.
std::vector<std::uint8_t> encode_pgm(const ImageGrid& img);
void render_pgm(const ImageGrid& img, const std::filesystem::path& path);

// JSON text helpers shared by manifests, sidecars and checkpoints.
std::string geometry_to_json(const ArrayGeometry& geom);
ArrayGeometry geometry_from_json(const std::string& text);
std::string manifest_to_json(const DatasetManifest& manifest);
DatasetManifest manifest_from_json(const std::string& text);

void write_text(const std::filesystem::path& path, const std::string& text);
std::string read_text(const std::filesystem::path& path);

}  // namespace asnet

#endif  // ASNET_CORE_HPP
