#ifndef ASNET_NN_CHECKPOINT_HPP
#define ASNET_NN_CHECKPOINT_HPP

#include "asnet/nn/asnet.hpp"

#include <filesystem>
#include <string>

namespace asnet::nn {

/// Trained network plus the input scaling it was trained with.
struct Checkpoint {
  NetConfig config;
  ParamStore<float> params;
  double signal_scale = 1.0;
  std::string ablation = "full";
};

/// One line of JSON (config, path -> shape table, scaling) terminated by '\n',
/// then every tensor as little-endian binary32 in path order.
void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::filesystem::path& path);

/// Number of floats in the payload section, read from the file size.
std::int64_t checkpoint_payload_count(const std::filesystem::path& path);

}  // namespace asnet::nn

#endif  // ASNET_NN_CHECKPOINT_HPP
