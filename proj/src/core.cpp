#include "asnet/core.hpp"

#include <json.hpp>

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numbers>
#include <set>
#include <sstream>

#include <fmt/core.h>

namespace asnet {

namespace fs = std::filesystem;
using nlohmann::json;

Eigen::Vector2d ArrayGeometry::element_position(int k) const {
  const double theta = 2.0 * std::numbers::pi * k / n_elements;
  return {radius_m * std::cos(theta), radius_m * std::sin(theta)};
}

Eigen::Vector2d ArrayGeometry::pixel_center(int row, int col) const {
  const double pitch = pixel_pitch();
  return {-0.5 * fov_m + (col + 0.5) * pitch, 0.5 * fov_m - (row + 0.5) * pitch};
}

void ArrayGeometry::validate() const {
  if (n_elements < 1) throw GeometryError("n_elements must be >= 1");
  if (!(radius_m > 0.0)) throw GeometryError("radius_m must be positive");
  if (!(speed_mps > 0.0)) throw GeometryError("speed_mps must be positive");
  if (!(fov_m > 0.0)) throw GeometryError("fov_m must be positive");
  if (n_grid < 1) throw GeometryError("n_grid must be >= 1");
  if (!(center_freq_hz > 0.0)) throw GeometryError("center_freq_hz must be positive");
  if (!(frac_bandwidth > 0.0 && frac_bandwidth < 2.0))
    throw GeometryError("frac_bandwidth must lie in (0, 2)");
  if (!(fov_m / std::sqrt(2.0) < radius_m))
    throw GeometryError(fmt::format(
        "imaging square must fit inside the ring: fov_m/sqrt(2) = {} >= radius_m = {}",
        fov_m / std::sqrt(2.0), radius_m));
  const double band_edge = center_freq_hz * (1.0 + 0.5 * frac_bandwidth);
  if (!(fs_hz > 2.0 * band_edge))
    throw GeometryError(fmt::format("fs_hz = {} must exceed twice the band edge ({} Hz)", fs_hz,
                                    band_edge));
}

ArrayGeometry make_geometry(int n_elements, double radius_m, double fov_m, int n_grid,
                            double speed_mps, double fs_hz, double center_freq_hz,
                            double frac_bandwidth) {
  ArrayGeometry g;
  g.n_elements = n_elements;
  g.radius_m = radius_m;
  g.fov_m = fov_m;
  g.n_grid = n_grid;
  g.speed_mps = speed_mps;
  g.fs_hz = fs_hz;
  g.center_freq_hz = center_freq_hz;
  g.frac_bandwidth = frac_bandwidth;
  g.validate();
  return g;
}

std::string to_string(Split split) { return split == Split::train ? "train" : "test"; }

Split split_from_string(const std::string& s) {
  if (s == "train") return Split::train;
  if (s == "test") return Split::test;
  throw FormatError("unknown split '" + s + "'");
}

std::string to_string(GroundTruth gt) {
  return gt == GroundTruth::phantom ? "phantom" : "dense_das";
}

GroundTruth ground_truth_from_string(const std::string& s) {
  if (s == "phantom") return GroundTruth::phantom;
  if (s == "dense_das") return GroundTruth::dense_das;
  throw FormatError("unknown ground_truth '" + s + "'");
}

std::string sample_signal_name(int index) { return fmt::format("sig_{:05d}.f32", index); }
std::string sample_image_name(int index) { return fmt::format("img_{:05d}.f32", index); }

// ---------------------------------------------------------------------------
// JSON

namespace {

void require_exact_keys(const json& j, const std::set<std::string>& keys, const char* what) {
  if (!j.is_object()) throw FormatError(fmt::format("{}: expected a JSON object", what));
  for (const auto& [k, v] : j.items()) {
    if (!keys.count(k)) throw FormatError(fmt::format("{}: unknown key '{}'", what, k));
  }
  for (const auto& k : keys) {
    if (!j.contains(k)) throw FormatError(fmt::format("{}: missing key '{}'", what, k));
  }
}

json geometry_json(const ArrayGeometry& g) {
  json j;
  j["n_elements"] = g.n_elements;
  j["radius_m"] = g.radius_m;
  j["speed_mps"] = g.speed_mps;
  j["fs_hz"] = g.fs_hz;
  j["fov_m"] = g.fov_m;
  j["n_grid"] = g.n_grid;
  j["center_freq_hz"] = g.center_freq_hz;
  j["frac_bandwidth"] = g.frac_bandwidth;
  return j;
}

ArrayGeometry geometry_from(const json& j) {
  require_exact_keys(j,
                     {"n_elements", "radius_m", "speed_mps", "fs_hz", "fov_m", "n_grid",
                      "center_freq_hz", "frac_bandwidth"},
                     "geometry");
  try {
    return make_geometry(j.at("n_elements").get<int>(), j.at("radius_m").get<double>(),
                         j.at("fov_m").get<double>(), j.at("n_grid").get<int>(),
                         j.at("speed_mps").get<double>(), j.at("fs_hz").get<double>(),
                         j.at("center_freq_hz").get<double>(),
                         j.at("frac_bandwidth").get<double>());
  } catch (const json::exception& e) {
    throw FormatError(std::string("geometry: ") + e.what());
  }
}

}  // namespace

std::string geometry_to_json(const ArrayGeometry& geom) { return geometry_json(geom).dump(2); }

ArrayGeometry geometry_from_json(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw FormatError(std::string("geometry JSON: ") + e.what());
  }
  return geometry_from(j);
}

std::string manifest_to_json(const DatasetManifest& m) {
  json j;
  j["version"] = m.version;
  j["n_samples"] = m.n_samples;
  j["geometry"] = geometry_json(m.geometry);
  j["signal_shape"] = {m.signal_m, m.signal_n};
  j["image_shape"] = {m.image_side, m.image_side};
  j["seed"] = m.seed;
  j["split"] = to_string(m.split);
  j["ground_truth"] = to_string(m.ground_truth);
  return j.dump(2) + "\n";
}

DatasetManifest manifest_from_json(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw FormatError(std::string("manifest.json: ") + e.what());
  }
  require_exact_keys(j,
                     {"version", "n_samples", "geometry", "signal_shape", "image_shape", "seed",
                      "split", "ground_truth"},
                     "manifest.json");
  DatasetManifest m;
  try {
    m.version = j.at("version").get<int>();
    m.n_samples = j.at("n_samples").get<int>();
    m.geometry = geometry_from(j.at("geometry"));
    const auto sig = j.at("signal_shape").get<std::vector<int>>();
    const auto img = j.at("image_shape").get<std::vector<int>>();
    if (sig.size() != 2 || img.size() != 2)
      throw FormatError("manifest.json: shapes must have two entries");
    m.signal_m = sig[0];
    m.signal_n = sig[1];
    if (img[0] != img[1]) throw FormatError("manifest.json: image_shape must be square");
    m.image_side = img[0];
    m.seed = j.at("seed").get<std::uint64_t>();
    m.split = split_from_string(j.at("split").get<std::string>());
    m.ground_truth = ground_truth_from_string(j.at("ground_truth").get<std::string>());
  } catch (const json::exception& e) {
    throw FormatError(std::string("manifest.json: ") + e.what());
  }
  if (m.version != 1) throw FormatError(fmt::format("manifest.json: unsupported version {}", m.version));
  if (m.n_samples < 0) throw ValidationError("manifest.json: n_samples must be >= 0");
  if (m.signal_m < 1 || m.signal_n < 1 || m.image_side < 1)
    throw ValidationError("manifest.json: shapes must be positive");
  if (m.signal_n != m.geometry.n_elements)
    throw ValidationError(fmt::format("manifest.json: signal has {} sensors but geometry has {}",
                                      m.signal_n, m.geometry.n_elements));
  if (m.image_side != m.geometry.n_grid)
    throw ValidationError(fmt::format("manifest.json: image side {} != geometry n_grid {}",
                                      m.image_side, m.geometry.n_grid));
  return m;
}

// ---------------------------------------------------------------------------
// Binary I/O

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open for writing: " + path.string());
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  if (!out) throw IoError("write failed: " + path.string());
}

std::string read_text(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open: " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_f32(const fs::path& path, const float* values, std::size_t count) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open for writing: " + path.string());
  if constexpr (std::endian::native == std::endian::little) {
    out.write(reinterpret_cast<const char*>(values), static_cast<std::streamsize>(count * 4));
  } else {
    std::vector<char> buf(count * 4);
    for (std::size_t i = 0; i < count; ++i) {
      std::uint32_t bits;
      std::memcpy(&bits, values + i, 4);
      for (int b = 0; b < 4; ++b) buf[i * 4 + b] = static_cast<char>((bits >> (8 * b)) & 0xFF);
    }
    out.write(buf.data(), static_cast<std::streamsize>(buf.size()));
  }
  if (!out) throw IoError("write failed: " + path.string());
}

std::vector<float> read_f32(const fs::path& path) {
  std::error_code ec;
  const auto bytes = fs::file_size(path, ec);
  if (ec) throw IoError("cannot open: " + path.string());
  if (bytes % 4 != 0)
    throw FormatError(fmt::format("{}: size {} is not a multiple of 4 bytes", path.string(), bytes));
  return read_f32(path, bytes / 4);
}

std::vector<float> read_f32(const fs::path& path, std::size_t expected_count) {
  std::error_code ec;
  const auto bytes = fs::file_size(path, ec);
  if (ec) throw IoError("cannot open: " + path.string());
  const std::uintmax_t expected = expected_count * 4;
  if (bytes != expected) {
    if (bytes < expected)
      throw FormatError(fmt::format("{}: expected {} bytes, found {} (deficit {} bytes)",
                                    path.string(), expected, bytes, expected - bytes));
    throw FormatError(fmt::format("{}: expected {} bytes, found {} (excess {} bytes)",
                                  path.string(), expected, bytes, bytes - expected));
  }
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open: " + path.string());
  std::vector<float> values(expected_count);
  in.read(reinterpret_cast<char*>(values.data()), static_cast<std::streamsize>(expected));
  if (!in) throw IoError("read failed: " + path.string());
  if constexpr (std::endian::native != std::endian::little) {
    for (auto& v : values) {
      std::uint32_t bits;
      std::memcpy(&bits, &v, 4);
      bits = ((bits & 0xFF) << 24) | ((bits & 0xFF00) << 8) | ((bits >> 8) & 0xFF00) | (bits >> 24);
      std::memcpy(&v, &bits, 4);
    }
  }
  return values;
}

RawSignalMatrix read_signal(const fs::path& path, int m, int n, double fs_hz) {
  auto values = read_f32(path, static_cast<std::size_t>(m) * n);
  RawSignalMatrix s;
  s.fs_hz = fs_hz;
  s.data = Eigen::Map<RowMatrixXf>(values.data(), m, n);
  return s;
}

ImageGrid read_image(const fs::path& path, int side, double fov_m) {
  auto values = read_f32(path, static_cast<std::size_t>(side) * side);
  ImageGrid img;
  img.fov_m = fov_m;
  img.data = Eigen::Map<RowMatrixXf>(values.data(), side, side);
  return img;
}

void write_image(const fs::path& path, const ImageGrid& img) {
  write_f32(path, img.data.data(), static_cast<std::size_t>(img.data.size()));
}

// ---------------------------------------------------------------------------
// Dataset

namespace {

void check_sample(const DatasetManifest& manifest, const Sample& sample, std::size_t i) {
  const auto& [sig, img] = sample;
  if (sig.m() != manifest.signal_m || sig.n() != manifest.signal_n)
    throw ValidationError(fmt::format("sample {}: signal shape ({}, {}) != manifest ({}, {})", i,
                                      sig.m(), sig.n(), manifest.signal_m, manifest.signal_n));
  if (img.data.rows() != manifest.image_side || img.data.cols() != manifest.image_side)
    throw ValidationError(fmt::format("sample {}: image shape ({}, {}) != manifest side {}", i,
                                      img.data.rows(), img.data.cols(), manifest.image_side));
  if (!sig.data.allFinite() || !img.data.allFinite())
    throw ValidationError(fmt::format("sample {}: non-finite values", i));
}

}  // namespace

DatasetWriter::DatasetWriter(fs::path dir, DatasetManifest manifest)
    : dir_(std::move(dir)), manifest_(std::move(manifest)) {
  std::error_code ec;
  fs::create_directories(dir_, ec);
  if (ec) throw IoError("cannot create directory: " + dir_.string());
}

void DatasetWriter::append(const Sample& sample) {
  if (written_ >= manifest_.n_samples)
    throw ValidationError(fmt::format("sample {}: manifest declares only {} samples", written_,
                                      manifest_.n_samples));
  check_sample(manifest_, sample, static_cast<std::size_t>(written_));
  const auto& [sig, img] = sample;
  write_f32(dir_ / sample_signal_name(written_), sig.data.data(),
            static_cast<std::size_t>(sig.data.size()));
  write_image(dir_ / sample_image_name(written_), img);
  ++written_;
}

void DatasetWriter::finish() {
  if (written_ != manifest_.n_samples)
    throw ValidationError(fmt::format("manifest declares {} samples but {} were written",
                                      manifest_.n_samples, written_));
  write_text(dir_ / "manifest.json", manifest_to_json(manifest_));
}

void write_dataset(const fs::path& dir, const DatasetManifest& manifest,
                   const std::vector<Sample>& samples) {
  if (manifest.n_samples != static_cast<int>(samples.size()))
    throw ValidationError(fmt::format("manifest declares {} samples but {} were given",
                                      manifest.n_samples, samples.size()));
  for (std::size_t i = 0; i < samples.size(); ++i) check_sample(manifest, samples[i], i);
  DatasetWriter writer(dir, manifest);
  for (const auto& s : samples) writer.append(s);
  writer.finish();
}

DatasetReader::DatasetReader(fs::path dir) : dir_(std::move(dir)) {
  const auto manifest_path = dir_ / "manifest.json";
  if (!fs::exists(manifest_path)) throw FormatError("missing manifest: " + manifest_path.string());
  manifest_ = manifest_from_json(read_text(manifest_path));

  const std::uintmax_t sig_bytes = static_cast<std::uintmax_t>(manifest_.signal_m) * manifest_.signal_n * 4;
  const std::uintmax_t img_bytes = static_cast<std::uintmax_t>(manifest_.image_side) * manifest_.image_side * 4;
  int pairs_present = 0;
  while (fs::exists(dir_ / sample_signal_name(pairs_present)) &&
         fs::exists(dir_ / sample_image_name(pairs_present)))
    ++pairs_present;
  if (pairs_present != manifest_.n_samples)
    throw ValidationError(fmt::format("{}: manifest declares {} samples but {} file pairs are present",
                                      dir_.string(), manifest_.n_samples, pairs_present));
  for (int i = 0; i < manifest_.n_samples; ++i) {
    for (const auto& [name, expected] :
         {std::pair{sample_signal_name(i), sig_bytes}, std::pair{sample_image_name(i), img_bytes}}) {
      const auto actual = fs::file_size(dir_ / name);
      if (actual != expected)
        throw FormatError(fmt::format("{}: expected {} bytes, found {} ({} {} bytes)",
                                      (dir_ / name).string(), expected, actual,
                                      actual < expected ? "deficit" : "excess",
                                      actual < expected ? expected - actual : actual - expected));
    }
  }
}

RawSignalMatrix DatasetReader::signal(int index) const {
  if (index < 0 || index >= manifest_.n_samples)
    throw std::out_of_range(fmt::format("sample index {} out of range", index));
  return read_signal(dir_ / sample_signal_name(index), manifest_.signal_m, manifest_.signal_n,
                     manifest_.geometry.fs_hz);
}

ImageGrid DatasetReader::image(int index) const {
  if (index < 0 || index >= manifest_.n_samples)
    throw std::out_of_range(fmt::format("sample index {} out of range", index));
  return read_image(dir_ / sample_image_name(index), manifest_.image_side, manifest_.geometry.fov_m);
}

Sample DatasetReader::sample(int index) const { return {signal(index), image(index)}; }

// ---------------------------------------------------------------------------
// PGM

std::vector<std::uint8_t> encode_pgm(const ImageGrid& img) {
  const int rows = static_cast<int>(img.data.rows());
  const int cols = static_cast<int>(img.data.cols());
  const std::string header = fmt::format("P5\n{} {}\n255\n", cols, rows);
  std::vector<std::uint8_t> out(header.begin(), header.end());
  out.reserve(header.size() + static_cast<std::size_t>(rows) * cols);
  const double lo = img.data.size() ? img.data.minCoeff() : 0.0;
  const double hi = img.data.size() ? img.data.maxCoeff() : 0.0;
  const double range = hi - lo;
  for (int r = 0; r < rows; ++r) {
    for (int c = 0; c < cols; ++c) {
      double v = 0.0;
      if (range > 0.0) v = std::clamp((img.data(r, c) - lo) / range, 0.0, 1.0);
      out.push_back(static_cast<std::uint8_t>(std::lround(255.0 * v)));
    }
  }
  return out;
}

void render_pgm(const ImageGrid& img, const fs::path& path) {
  const auto bytes = encode_pgm(img);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open for writing: " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("write failed: " + path.string());
}

}  // namespace asnet
