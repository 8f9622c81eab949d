#include "asnet/nn/checkpoint.hpp"

#include <json.hpp>

#include <cstring>
#include <fstream>

#include <fmt/format.h>

namespace asnet::nn {

namespace fs = std::filesystem;
using json = nlohmann::json;

namespace {

constexpr const char* kFormat = "asnet-checkpoint";

void put_le(std::string& buf, float v) {
  std::uint32_t bits;
  std::memcpy(&bits, &v, 4);
  for (int b = 0; b < 4; ++b) buf.push_back(static_cast<char>((bits >> (8 * b)) & 0xFF));
}

float get_le(const unsigned char* p) {
  const std::uint32_t bits = std::uint32_t(p[0]) | (std::uint32_t(p[1]) << 8) | (std::uint32_t(p[2]) << 16) |
                             (std::uint32_t(p[3]) << 24);
  float v;
  std::memcpy(&v, &bits, 4);
  return v;
}

struct Header {
  json j;
  std::size_t bytes = 0;
};

Header read_header(std::ifstream& in, const fs::path& path) {
  std::string line;
  if (!std::getline(in, line)) throw FormatError(fmt::format("{}: empty checkpoint", path.string()));
  Header h;
  h.bytes = line.size() + 1;
  try {
    h.j = json::parse(line);
  } catch (const json::exception& e) {
    throw FormatError(fmt::format("{}: bad checkpoint header: {}", path.string(), e.what()));
  }
  if (!h.j.is_object() || h.j.value("format", "") != kFormat)
    throw FormatError(fmt::format("{}: not an asnet checkpoint", path.string()));
  if (h.j.value("version", 0) != 1)
    throw FormatError(fmt::format("{}: unsupported checkpoint version", path.string()));
  return h;
}

}  // namespace

void save_checkpoint(const fs::path& path, const Checkpoint& ckpt) {
  check_params(ckpt.params, ckpt.config);
  json header;
  header["format"] = kFormat;
  header["version"] = 1;
  header["config"] = json::parse(net_config_to_json(ckpt.config));
  json shapes = json::object();
  std::int64_t count = 0;
  for (const auto& [name, t] : ckpt.params) {
    const Shape s = t.shape();
    shapes[name] = {s.n, s.c, s.h, s.w};
    count += t.size();
  }
  header["params"] = shapes;
  header["n_values"] = count;
  header["signal_scale"] = ckpt.signal_scale;
  header["ablation"] = ckpt.ablation;

  std::string buf = header.dump();
  buf.push_back('\n');
  buf.reserve(buf.size() + static_cast<std::size_t>(count) * 4);
  for (const auto& [name, t] : ckpt.params)
    for (Eigen::Index i = 0; i < t.size(); ++i) put_le(buf, t.data()[i]);
  if (!path.parent_path().empty()) fs::create_directories(path.parent_path());
  write_text(path, buf);
}

Checkpoint load_checkpoint(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open: " + path.string());
  const Header h = read_header(in, path);
  Checkpoint ckpt;
  std::int64_t count = 0;
  try {
    ckpt.config = net_config_from_json(h.j.at("config").dump());
    ckpt.signal_scale = h.j.at("signal_scale").get<double>();
    ckpt.ablation = h.j.at("ablation").get<std::string>();
    for (const auto& [name, shape] : h.j.at("params").items()) {
      const auto dims = shape.get<std::array<int, 4>>();
      Tensor<float> t(Shape{dims[0], dims[1], dims[2], dims[3]});
      count += t.size();
      ckpt.params.emplace(name, std::move(t));
    }
  } catch (const json::exception& e) {
    throw FormatError(fmt::format("{}: bad checkpoint header: {}", path.string(), e.what()));
  }
  check_params(ckpt.params, ckpt.config);

  const auto total = fs::file_size(path);
  const std::uintmax_t expected = h.bytes + static_cast<std::uintmax_t>(count) * 4;
  if (total != expected)
    throw FormatError(fmt::format("{}: expected {} bytes, found {}", path.string(), expected, total));
  std::vector<unsigned char> payload(static_cast<std::size_t>(count) * 4);
  in.read(reinterpret_cast<char*>(payload.data()), static_cast<std::streamsize>(payload.size()));
  if (!in) throw IoError("read failed: " + path.string());
  const unsigned char* p = payload.data();
  for (auto& [name, t] : ckpt.params)
    for (Eigen::Index i = 0; i < t.size(); ++i, p += 4) t.data()[i] = get_le(p);
  return ckpt;
}

std::int64_t checkpoint_payload_count(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open: " + path.string());
  const Header h = read_header(in, path);
  const auto total = fs::file_size(path);
  if ((total - h.bytes) % 4 != 0) throw FormatError(fmt::format("{}: truncated payload", path.string()));
  return static_cast<std::int64_t>((total - h.bytes) / 4);
}

}  // namespace asnet::nn
