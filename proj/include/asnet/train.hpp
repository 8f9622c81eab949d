#ifndef ASNET_TRAIN_HPP
#define ASNET_TRAIN_HPP

#include "asnet/core.hpp"
#include "asnet/metrics.hpp"
#include "asnet/nn/asnet.hpp"
#include "asnet/nn/checkpoint.hpp"

#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <string>
#include <vector>

namespace asnet {

enum class Ablation { full, no_ft, no_sfe, no_bpr, no_aux };

std::string to_string(Ablation a);
Ablation ablation_from_string(const std::string& s);
inline constexpr std::array<Ablation, 5> kAllAblations{Ablation::full, Ablation::no_ft, Ablation::no_sfe,
                                                       Ablation::no_bpr, Ablation::no_aux};

struct TrainConfig {
  int epochs = 60;
  int batch_size = 8;
  double base_lr = 0.005;
  double lr_decay = 0.2;
  int decay_every = 50;
  double lambda_r = 0.2;
  double lambda_a = 1.0;
  std::uint64_t seed = 0;
  Ablation ablation = Ablation::full;
  int threads = 1;
  bool deterministic = true;

  void validate() const;
  static TrainConfig paper();
};

std::string train_config_to_json(const TrainConfig& cfg);

/// Network structure for an ablation preset.
nn::NetConfig apply_ablation(nn::NetConfig cfg, Ablation a);
/// Loss weights for an ablation preset (only no_aux changes them).
TrainConfig apply_ablation(TrainConfig cfg, Ablation a);

/// lambda_r * smoothL1(y, y_r) + lambda_a * smoothL1(y, y_d).
template <typename A, typename B, typename C>
double total_loss(const Eigen::DenseBase<A>& y, const Eigen::DenseBase<B>& y_r, const Eigen::DenseBase<C>& y_d,
                  double lambda_r, double lambda_a) {
  return lambda_r * smooth_l1(y_r, y) + lambda_a * smooth_l1(y_d, y);
}

/// Without an auxiliary output the aux term is zero.
template <typename A, typename B>
double total_loss(const Eigen::DenseBase<A>& y, const Eigen::DenseBase<B>& y_r, double lambda_r) {
  return lambda_r * smooth_l1(y_r, y);
}

/// base_lr * lr_decay^floor(epoch / decay_every).
double lr_at(int epoch, const TrainConfig& cfg);

/// Adaptive-moment optimizer over a parameter store.
template <typename Scalar>
class Adam {
 public:
  explicit Adam(double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8)
      : beta1_(beta1), beta2_(beta2), eps_(eps) {}

  void step(nn::ParamStore<Scalar>& params, const nn::ParamStore<Scalar>& grads, double lr) {
    if (m_.empty()) {
      m_ = nn::zeros_like(params);
      v_ = nn::zeros_like(params);
    }
    ++t_;
    const double c1 = 1.0 - std::pow(beta1_, t_);
    const double c2 = 1.0 - std::pow(beta2_, t_);
    for (auto& [path, p] : params) {
      const auto& g = grads.at(path).array();
      auto& m = m_.at(path).array();
      auto& v = v_.at(path).array();
      m = Scalar(beta1_) * m + Scalar(1 - beta1_) * g;
      v = Scalar(beta2_) * v + Scalar(1 - beta2_) * g.square();
      p.array() -= Scalar(lr) * (m / Scalar(c1)) / ((v / Scalar(c2)).sqrt() + Scalar(eps_));
    }
  }

  int steps() const { return t_; }

 private:
  double beta1_;
  double beta2_;
  double eps_;
  int t_ = 0;
  nn::ParamStore<Scalar> m_;
  nn::ParamStore<Scalar> v_;
};

/// Inputs for one sample, ready for the network.
struct PreparedSample {
  nn::Tensor<float> input;
  nn::Tensor<float> das;
  nn::Tensor<float> target;
  ImageGrid das_image;
};

/// 1 / max|signal| over every sample of the dataset (1 for an all-zero set).
double dataset_signal_scale(const DatasetReader& reader);

/// Folded (or raw) network input, min-max normalised sparse DAS and target.
PreparedSample prepare_sample(const DatasetReader& reader, int index, const nn::NetConfig& cfg, double signal_scale);

/// Network config derived from a dataset and an ablation preset.
nn::NetConfig net_config_for(const DatasetManifest& manifest, bool paper_scale, Ablation a, std::uint64_t seed);

struct EpochLog {
  int epoch = 0;
  double lr = 0.0;
  double loss = 0.0;
  double recon = 0.0;
  double aux = 0.0;
};

struct TrainResult {
  std::filesystem::path checkpoint;
  std::filesystem::path loss_log;
  std::vector<EpochLog> epochs;
};

/// Trains on the dataset at `dataset_dir`; writes checkpoint.bin, loss.csv
/// and train_config.json under `out_dir`. Throws Error on a non-finite loss.
TrainResult train(const std::filesystem::path& dataset_dir, const TrainConfig& cfg, const nn::NetConfig& net_cfg,
                  const std::filesystem::path& out_dir,
                  const std::function<void(const EpochLog&)>& on_epoch = {});

std::string loss_log_csv(const std::vector<EpochLog>& log);

struct MethodSummary {
  double ssim_mean = 0.0;
  double ssim_std = 0.0;
  double psnr_mean = 0.0;
  double psnr_std = 0.0;
  int count = 0;
};

struct EvalRow {
  int index = 0;
  std::string method;
  double ssim = 0.0;
  double psnr = 0.0;
};

struct EvalReport {
  std::vector<EvalRow> rows;
  std::map<std::string, MethodSummary> summary;
  /// How each method's images were mapped to the unit range before scoring.
  std::map<std::string, std::string> normalization;
};

/// Scores each method's images against the targets (population mean and std).
EvalReport score_methods(const std::map<std::string, std::vector<ImageGrid>>& predictions,
                         const std::vector<ImageGrid>& targets);

/// Scores the network (output clamped to [0, 1]) and sparse DAS on a dataset.
EvalReport evaluate(const nn::Checkpoint& ckpt, const std::filesystem::path& dataset_dir, int threads = 1);
EvalReport evaluate(const std::filesystem::path& checkpoint, const std::filesystem::path& dataset_dir,
                    int threads = 1);

std::string eval_csv(const EvalReport& report);
std::string eval_json(const EvalReport& report);

/// Mean +- std per preset, one row per ablation.
std::string ablation_table_csv(const std::vector<std::pair<std::string, EvalReport>>& runs,
                               const std::string& method = "asnet");
std::string ablation_table_markdown(const std::vector<std::pair<std::string, EvalReport>>& runs,
                                    const std::string& method = "asnet");

struct FlopEstimate {
  double total = 0.0;
  std::vector<nn::FlopRecord> layers;
};

/// FLOPs (2 x MACs, plus bias adds and elementwise work) of one forward pass.
FlopEstimate estimate_flops(const nn::NetConfig& cfg, const nn::Shape& input_shape);
FlopEstimate estimate_flops(const nn::NetConfig& cfg);

struct LatencyStats {
  double median_s = 0.0;
  double mean_s = 0.0;
  double variance_s2 = 0.0;
  std::vector<double> runs_s;
  std::string environment;
};

/// Median wall time of single-sample forward passes after `warmup` runs.
LatencyStats benchmark_latency(const nn::NetConfig& cfg, const nn::ParamStore<float>& params, int n_runs = 20,
                               int warmup = 3);
LatencyStats benchmark_latency(const std::filesystem::path& checkpoint, int n_runs = 20, int warmup = 3);

std::string environment_description();

struct ComplexityReport {
  std::int64_t n_params = 0;
  double flops_per_sample = 0.0;
  LatencyStats latency;
  std::vector<nn::FlopRecord> layers;
};

ComplexityReport complexity(const nn::NetConfig& cfg, const nn::ParamStore<float>& params, int n_runs = 20);
std::string complexity_json(const ComplexityReport& ft, const ComplexityReport* no_ft = nullptr);

}  // namespace asnet

#endif  // ASNET_TRAIN_HPP
