#ifndef ASNET_NN_ASNET_HPP
#define ASNET_NN_ASNET_HPP

#include "asnet/core.hpp"
#include "asnet/nn/graph.hpp"
#include "asnet/nn/ops.hpp"
#include "asnet/nn/tensor.hpp"

#include <array>
#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <vector>

namespace asnet::nn {

/// Architecture hyper-parameters. `use_bpr` / `use_sfe` switch off whole
/// modules for ablations; at least one of them must stay on.
struct NetConfig {
  int in_channels_q = 12;
  int side = 64;
  std::array<int, 4> enc_widths{16, 32, 64, 128};
  int sfe_width = 32;
  bool use_ft_stem = true;
  bool use_bpr = true;
  bool use_sfe = true;
  std::uint64_t seed = 0;

  void validate() const;
  bool operator==(const NetConfig&) const = default;

  static NetConfig desk(int q = 12);
  static NetConfig paper(int q = 20);
};

std::string net_config_to_json(const NetConfig& cfg);
NetConfig net_config_from_json(const std::string& text);

enum class ParamKind { conv_weight, conv_transpose_weight, bias, gc_key, gc_key_bias, gc_value };

struct ParamSpec {
  Shape shape;
  ParamKind kind = ParamKind::conv_weight;
  int fan_in = 1;
};

using ParamSpecs = std::map<std::string, ParamSpec>;

/// Every parameter of the network described by `cfg`, keyed by block path.
ParamSpecs param_specs(const NetConfig& cfg);

/// Block path -> tensor. std::map keeps lexicographic order.
template <typename Scalar>
using ParamStore = std::map<std::string, Tensor<Scalar>>;

/// He-uniform convolution weights, zero biases, zero GC value weights. A single
/// generator seeded from cfg.seed visits parameters in path order.
template <typename Scalar>
ParamStore<Scalar> init_params(const NetConfig& cfg);

template <typename Scalar>
ParamStore<Scalar> zeros_like(const ParamStore<Scalar>& store);

std::int64_t count_params(const NetConfig& cfg);

template <typename Scalar>
std::int64_t count_params(const ParamStore<Scalar>& store) {
  std::int64_t total = 0;
  for (const auto& [path, t] : store) total += t.size();
  return total;
}

/// Throws FormatError unless `store` has exactly the paths and shapes of `cfg`.
template <typename Scalar>
void check_params(const ParamStore<Scalar>& store, const NetConfig& cfg);

/// Binds parameters of a store into a graph, once per path.
template <typename Scalar>
class Binder {
 public:
  Binder(Graph<Scalar>& graph, const ParamStore<Scalar>& store) : graph_(graph), store_(store) {}

  Var operator()(const std::string& path);
  bool has(const std::string& path) const { return store_.count(path) != 0; }
  Graph<Scalar>& graph() { return graph_; }

  /// Adds the gradient of every bound parameter into `grads` (same paths).
  void accumulate(ParamStore<Scalar>& grads);

 private:
  Graph<Scalar>& graph_;
  const ParamStore<Scalar>& store_;
  std::map<std::string, Var> bound_;
};

/// Conv with `path.weight` / `path.bias`, optionally followed by ReLU.
template <typename Scalar>
Var conv_layer(Binder<Scalar>& p, Var x, const std::string& path, const ConvGeometry& geo, bool activate);

/// conv3x3 + ReLU, conv3x3 stride 2 + ReLU.
template <typename Scalar>
Var down_block(Binder<Scalar>& p, Var x, const std::string& path);

/// GC attention with `path.wk`, `path.bk`, `path.wv`.
template <typename Scalar>
Var gc_layer(Binder<Scalar>& p, Var x, const std::string& path);

/// Four dilated branches (rates 1 | 3 | 1,3 | 1,3,5), concatenated, merged
/// by a 1x1 conv and added to the input.
template <typename Scalar>
Var atrous_inception(Binder<Scalar>& p, Var x, const std::string& path);

/// Stride-2 transposed 3x3 conv + ReLU; doubles the side.
template <typename Scalar>
Var up_stage(Binder<Scalar>& p, Var x, const std::string& path);

template <typename Scalar>
struct BprOutputs {
  Var bottom;
  std::array<Var, 4> decoder;
};

/// Encoder / bottom / decoder. `pooled`, when non-empty, holds the semantic
/// maps at sides N/16, N/8, N/4, N/2 fused at the bottom and after the first
/// three decoder stages.
template <typename Scalar>
BprOutputs<Scalar> bpr_forward(Binder<Scalar>& p, Var input, const NetConfig& cfg,
                               std::span<const Var> pooled = {});

template <typename Scalar>
struct SfeOutputs {
  Var features;
  Var y_d;
};

template <typename Scalar>
SfeOutputs<Scalar> sfe_forward(Binder<Scalar>& p, Var das, const NetConfig& cfg);

/// Average-pools semantic features to sides N/16, N/8, N/4, N/2, N.
template <typename Scalar>
std::array<Var, 5> ff1(Graph<Scalar>& g, Var features, const NetConfig& cfg);

template <typename Scalar>
Var ff2(Binder<Scalar>& p, Var bpr_out, Var pooled_full);

template <typename Scalar>
struct NetOutputs {
  Var y_r;
  Var y_d;  // invalid without the SFE module
};

/// `input` is the folded cube (B, q, N, N), or the padded raw signal
/// (B, 1, q*N, N) when the FT stem is disabled. `das` is (B, 1, N, N).
template <typename Scalar>
NetOutputs<Scalar> asnet_forward(Binder<Scalar>& p, Var input, Var das, const NetConfig& cfg);

template <typename Scalar>
struct Prediction {
  Tensor<Scalar> y_r;
  Tensor<Scalar> y_d;
  std::vector<FlopRecord> flops;
};

/// Inference without gradient bookkeeping.
template <typename Scalar>
Prediction<Scalar> predict(const NetConfig& cfg, const ParamStore<Scalar>& params,
                           const Tensor<Scalar>& input, const Tensor<Scalar>& das);

Shape input_shape(const NetConfig& cfg, int batch = 1);
Shape das_shape(const NetConfig& cfg, int batch = 1);

/// Network input for one signal, scaled by `scale`.
Tensor<float> make_network_input(const RawSignalMatrix& s, const NetConfig& cfg, float scale = 1.0f);
Tensor<float> make_das_input(const ImageGrid& das);

}  // namespace asnet::nn

#endif  // ASNET_NN_ASNET_HPP
