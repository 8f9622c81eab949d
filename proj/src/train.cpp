#include "asnet/train.hpp"

#include "asnet/beamform.hpp"
#include "asnet/fold.hpp"
#include "asnet/simulate.hpp"

#include <json.hpp>

#include <algorithm>
#include <atomic>
#include <chrono>
#include <limits>
#include <numeric>
#include <thread>

#include <fmt/format.h>

namespace asnet {

namespace fs = std::filesystem;
using json = nlohmann::json;
using nn::Var;

namespace {

std::string num(double v) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  return fmt::format("{:.9g}", v);
}

json num_json(double v) {
  if (std::isfinite(v)) return v;
  return num(v);
}

// Runs fn(i) for i in [0, count) on up to `threads` workers.
template <typename Fn>
void parallel_for(int count, int threads, Fn&& fn) {
  const int workers = std::clamp(threads, 1, std::max(1, count));
  if (workers == 1) {
    for (int i = 0; i < count; ++i) fn(i);
    return;
  }
  std::atomic<int> next{0};
  std::vector<std::exception_ptr> errors(workers);
  std::vector<std::thread> pool;
  for (int w = 0; w < workers; ++w) {
    pool.emplace_back([&, w] {
      try {
        for (int i = next++; i < count; i = next++) fn(i);
      } catch (...) {
        errors[w] = std::current_exception();
      }
    });
  }
  for (auto& t : pool) t.join();
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
}

struct SampleLoss {
  double total = 0.0;
  double recon = 0.0;
  double aux = 0.0;
};

SampleLoss sample_gradient(const nn::NetConfig& net_cfg, const TrainConfig& cfg, const nn::ParamStore<float>& params,
                           const PreparedSample& s, nn::ParamStore<float>& grads) {
  nn::Graph<float> g(true);
  nn::Binder<float> p(g, params);
  const Var x = g.input(s.input);
  const Var d = g.input(s.das);
  const Var y = g.input(s.target);
  const nn::NetOutputs<float> out = nn::asnet_forward(p, x, d, net_cfg);
  const Var recon = nn::smooth_l1_loss(g, out.y_r, y);
  std::vector<Var> terms{recon};
  std::vector<float> weights{static_cast<float>(cfg.lambda_r)};
  Var aux;
  if (out.y_d.valid()) {
    aux = nn::smooth_l1_loss(g, out.y_d, y);
    terms.push_back(aux);
    weights.push_back(static_cast<float>(cfg.lambda_a));
  }
  const Var loss = nn::weighted_sum(g, terms, weights);
  SampleLoss result;
  result.total = g.value(loss).data()[0];
  result.recon = g.value(recon).data()[0];
  result.aux = aux.valid() ? g.value(aux).data()[0] : 0.0;
  if (!std::isfinite(result.total)) return result;
  g.backward(loss);
  p.accumulate(grads);
  return result;
}

nn::Tensor<float> random_tensor(const nn::Shape& shape, Rng& rng) {
  nn::Tensor<float> t(shape);
  for (Eigen::Index i = 0; i < t.size(); ++i) t.data()[i] = static_cast<float>(rng.uniform());
  return t;
}

}  // namespace

std::string to_string(Ablation a) {
  switch (a) {
    case Ablation::full: return "full";
    case Ablation::no_ft: return "no_ft";
    case Ablation::no_sfe: return "no_sfe";
    case Ablation::no_bpr: return "no_bpr";
    case Ablation::no_aux: return "no_aux";
  }
  return "full";
}

Ablation ablation_from_string(const std::string& s) {
  for (Ablation a : kAllAblations)
    if (to_string(a) == s) return a;
  throw ValidationError(fmt::format("unknown ablation '{}' (expected full, no_ft, no_sfe, no_bpr or no_aux)", s));
}

void TrainConfig::validate() const {
  if (epochs < 1) throw ValidationError(fmt::format("epochs must be >= 1, got {}", epochs));
  if (batch_size < 1) throw ValidationError(fmt::format("batch size must be >= 1, got {}", batch_size));
  if (!(base_lr > 0.0)) throw ValidationError("base learning rate must be positive");
  if (!(lr_decay > 0.0)) throw ValidationError("learning-rate decay must be positive");
  if (decay_every < 1) throw ValidationError("decay interval must be >= 1");
  if (!(lambda_r >= 0.0) || !(lambda_a >= 0.0)) throw ValidationError("loss weights must be non-negative");
  if (threads < 1) throw ValidationError("threads must be >= 1");
}

TrainConfig TrainConfig::paper() {
  TrainConfig cfg;
  cfg.epochs = 600;
  cfg.batch_size = 16;
  return cfg;
}

std::string train_config_to_json(const TrainConfig& cfg) {
  json j;
  j["epochs"] = cfg.epochs;
  j["batch_size"] = cfg.batch_size;
  j["base_lr"] = cfg.base_lr;
  j["lr_decay"] = cfg.lr_decay;
  j["decay_every"] = cfg.decay_every;
  j["lambda_r"] = cfg.lambda_r;
  j["lambda_a"] = cfg.lambda_a;
  j["seed"] = cfg.seed;
  j["ablation"] = to_string(cfg.ablation);
  j["deterministic"] = cfg.deterministic;
  return j.dump(2) + "\n";
}

nn::NetConfig apply_ablation(nn::NetConfig cfg, Ablation a) {
  cfg.use_ft_stem = a != Ablation::no_ft;
  cfg.use_sfe = a != Ablation::no_sfe;
  cfg.use_bpr = a != Ablation::no_bpr;
  return cfg;
}

TrainConfig apply_ablation(TrainConfig cfg, Ablation a) {
  cfg.ablation = a;
  if (a == Ablation::no_aux) cfg.lambda_a = 0.0;
  return cfg;
}

double lr_at(int epoch, const TrainConfig& cfg) {
  if (epoch < 0) throw ValidationError("epoch must be non-negative");
  return cfg.base_lr * std::pow(cfg.lr_decay, epoch / cfg.decay_every);
}

double dataset_signal_scale(const DatasetReader& reader) {
  double peak = 0.0;
  for (int i = 0; i < reader.size(); ++i)
    peak = std::max(peak, static_cast<double>(reader.signal(i).data.cwiseAbs().maxCoeff()));
  return peak > 0.0 ? 1.0 / peak : 1.0;
}

PreparedSample prepare_sample(const DatasetReader& reader, int index, const nn::NetConfig& cfg, double signal_scale) {
  const DatasetManifest& man = reader.manifest();
  if (man.image_side != cfg.side)
    throw ShapeError(fmt::format("dataset images are {}x{}, network side is {}", man.image_side, man.image_side,
                                 cfg.side));
  const auto [signal, target] = reader.sample(index);
  PreparedSample s;
  s.input = nn::make_network_input(signal, cfg, static_cast<float>(signal_scale));
  s.das_image = normalize_minmax(das_reconstruct(signal, man.geometry));
  s.das = nn::make_das_input(s.das_image);
  s.target = nn::make_das_input(target);
  return s;
}

nn::NetConfig net_config_for(const DatasetManifest& manifest, bool paper_scale, Ablation a, std::uint64_t seed) {
  const int q = q_of(manifest.signal_m, manifest.image_side);
  nn::NetConfig cfg = paper_scale ? nn::NetConfig::paper(q) : nn::NetConfig::desk(q);
  cfg.side = manifest.image_side;
  cfg.seed = seed;
  cfg = apply_ablation(cfg, a);
  cfg.validate();
  return cfg;
}

std::string loss_log_csv(const std::vector<EpochLog>& log) {
  std::string out = "epoch,lr,loss,recon,aux\n";
  for (const auto& e : log)
    out += fmt::format("{},{},{},{},{}\n", e.epoch, num(e.lr), num(e.loss), num(e.recon), num(e.aux));
  return out;
}

TrainResult train(const fs::path& dataset_dir, const TrainConfig& cfg, const nn::NetConfig& net_cfg,
                  const fs::path& out_dir, const std::function<void(const EpochLog&)>& on_epoch) {
  cfg.validate();
  net_cfg.validate();
  const DatasetReader reader(dataset_dir);
  const int n = reader.size();
  if (n < 1) throw ValidationError(fmt::format("{}: dataset is empty", dataset_dir.string()));

  const double scale = dataset_signal_scale(reader);
  std::vector<PreparedSample> data(n);
  parallel_for(n, cfg.threads, [&](int i) { data[i] = prepare_sample(reader, i, net_cfg, scale); });

  nn::ParamStore<float> params = nn::init_params<float>(net_cfg);
  Adam<float> adam;
  Rng shuffle_rng(cfg.seed, 0x5eed);
  std::vector<int> order(n);
  std::iota(order.begin(), order.end(), 0);

  TrainResult result;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    for (int i = n - 1; i > 0; --i) std::swap(order[i], order[shuffle_rng.uniform_int(0, i)]);
    const double lr = lr_at(epoch, cfg);
    EpochLog log;
    log.epoch = epoch;
    log.lr = lr;
    int batch_index = 0;
    for (int start = 0; start < n; start += cfg.batch_size, ++batch_index) {
      const int count = std::min(cfg.batch_size, n - start);
      std::vector<nn::ParamStore<float>> grads(count);
      std::vector<SampleLoss> losses(count);
      parallel_for(count, cfg.threads, [&](int k) {
        grads[k] = nn::zeros_like(params);
        losses[k] = sample_gradient(net_cfg, cfg, params, data[order[start + k]], grads[k]);
      });
      for (int k = 0; k < count; ++k) {
        if (!std::isfinite(losses[k].total))
          throw Error(fmt::format("training diverged: non-finite loss at epoch {} batch {} (sample {})", epoch,
                                  batch_index, order[start + k]));
        log.loss += losses[k].total;
        log.recon += losses[k].recon;
        log.aux += losses[k].aux;
      }
      nn::ParamStore<float>& total = grads[0];
      for (int k = 1; k < count; ++k)
        for (auto& [path, t] : total) t.array() += grads[k].at(path).array();
      for (auto& [path, t] : total) t.array() *= 1.0f / static_cast<float>(count);
      adam.step(params, total, lr);
    }
    log.loss /= n;
    log.recon /= n;
    log.aux /= n;
    result.epochs.push_back(log);
    if (on_epoch) on_epoch(log);
  }

  fs::create_directories(out_dir);
  nn::Checkpoint ckpt;
  ckpt.config = net_cfg;
  ckpt.params = std::move(params);
  ckpt.signal_scale = scale;
  ckpt.ablation = to_string(cfg.ablation);
  result.checkpoint = out_dir / "checkpoint.bin";
  result.loss_log = out_dir / "loss.csv";
  nn::save_checkpoint(result.checkpoint, ckpt);
  write_text(result.loss_log, loss_log_csv(result.epochs));
  write_text(out_dir / "train_config.json", train_config_to_json(cfg));
  return result;
}

EvalReport score_methods(const std::map<std::string, std::vector<ImageGrid>>& predictions,
                         const std::vector<ImageGrid>& targets) {
  EvalReport report;
  for (const auto& [method, images] : predictions) {
    if (images.size() != targets.size())
      throw ShapeError(fmt::format("{}: {} predictions for {} targets", method, images.size(), targets.size()));
    std::vector<double> ssims;
    std::vector<double> psnrs;
    for (std::size_t i = 0; i < images.size(); ++i) {
      const double s = ssim(images[i], targets[i]);
      const double p = psnr(images[i], targets[i]);
      report.rows.push_back({static_cast<int>(i), method, s, p});
      ssims.push_back(s);
      psnrs.push_back(p);
    }
    auto stats = [](const std::vector<double>& v, double& mean, double& sd) {
      if (v.empty()) {
        mean = sd = std::numeric_limits<double>::quiet_NaN();
        return;
      }
      const bool all_finite = std::all_of(v.begin(), v.end(), [](double x) { return std::isfinite(x); });
      if (!all_finite) {
        const bool all_inf = std::all_of(v.begin(), v.end(), [](double x) { return std::isinf(x) && x > 0; });
        mean = std::numeric_limits<double>::infinity();
        sd = all_inf ? 0.0 : std::numeric_limits<double>::quiet_NaN();
        return;
      }
      mean = std::accumulate(v.begin(), v.end(), 0.0) / v.size();
      double acc = 0.0;
      for (double x : v) acc += (x - mean) * (x - mean);
      sd = std::sqrt(acc / v.size());
    };
    MethodSummary sum;
    sum.count = static_cast<int>(images.size());
    stats(ssims, sum.ssim_mean, sum.ssim_std);
    stats(psnrs, sum.psnr_mean, sum.psnr_std);
    report.summary[method] = sum;
  }
  return report;
}

EvalReport evaluate(const nn::Checkpoint& ckpt, const fs::path& dataset_dir, int threads) {
  const DatasetReader reader(dataset_dir);
  const int n = reader.size();
  nn::check_params(ckpt.params, ckpt.config);
  const int q = q_of(reader.manifest().signal_m, ckpt.config.side);
  if (q != ckpt.config.in_channels_q || reader.manifest().image_side != ckpt.config.side)
    throw ValidationError(fmt::format("checkpoint expects q={} side={}, dataset gives q={} side={}",
                                      ckpt.config.in_channels_q, ckpt.config.side, q, reader.manifest().image_side));
  std::vector<ImageGrid> net(n), das(n), targets(n);
  parallel_for(n, threads, [&](int i) {
    const PreparedSample s = prepare_sample(reader, i, ckpt.config, ckpt.signal_scale);
    const nn::Prediction<float> pred = nn::predict(ckpt.config, ckpt.params, s.input, s.das);
    const int side = ckpt.config.side;
    net[i].fov_m = s.das_image.fov_m;
    net[i].data = pred.y_r.matrix(side, side).cwiseMax(0.0f).cwiseMin(1.0f);
    das[i] = s.das_image;
    targets[i] = reader.image(i);
  });
  EvalReport report = score_methods({{"asnet", net}, {"das_sparse", das}}, targets);
  report.normalization = {{"asnet", "clamp to [0, 1]"}, {"das_sparse", "min-max to [0, 1]"}};
  return report;
}

EvalReport evaluate(const fs::path& checkpoint, const fs::path& dataset_dir, int threads) {
  return evaluate(nn::load_checkpoint(checkpoint), dataset_dir, threads);
}

std::string eval_csv(const EvalReport& report) {
  std::string out = "index,method,ssim,psnr\n";
  for (const auto& r : report.rows) out += fmt::format("{},{},{},{}\n", r.index, r.method, num(r.ssim), num(r.psnr));
  return out;
}

std::string eval_json(const EvalReport& report) {
  json j;
  json methods = json::object();
  for (const auto& [method, s] : report.summary) {
    methods[method] = {{"count", s.count},
                       {"ssim_mean", num_json(s.ssim_mean)},
                       {"ssim_std", num_json(s.ssim_std)},
                       {"psnr_mean", num_json(s.psnr_mean)},
                       {"psnr_std", num_json(s.psnr_std)}};
  }
  j["summary"] = methods;
  if (!report.normalization.empty()) j["normalization"] = report.normalization;
  json rows = json::array();
  for (const auto& r : report.rows)
    rows.push_back({{"index", r.index}, {"method", r.method}, {"ssim", num_json(r.ssim)}, {"psnr", num_json(r.psnr)}});
  j["rows"] = rows;
  return j.dump(2) + "\n";
}

std::string ablation_table_csv(const std::vector<std::pair<std::string, EvalReport>>& runs, const std::string& method) {
  std::string out = "preset,ssim_mean,ssim_std,psnr_mean,psnr_std\n";
  for (const auto& [name, report] : runs) {
    const MethodSummary& s = report.summary.at(method);
    out += fmt::format("{},{},{},{},{}\n", name, num(s.ssim_mean), num(s.ssim_std), num(s.psnr_mean), num(s.psnr_std));
  }
  return out;
}

std::string ablation_table_markdown(const std::vector<std::pair<std::string, EvalReport>>& runs,
                                    const std::string& method) {
  std::string out = "| Preset | SSIM | PSNR (dB) |\n|---|---|---|\n";
  for (const auto& [name, report] : runs) {
    const MethodSummary& s = report.summary.at(method);
    out += fmt::format("| {} | {:.4f}±{:.4f} | {:.2f}±{:.2f} |\n", name, s.ssim_mean, s.ssim_std, s.psnr_mean,
                       s.psnr_std);
  }
  return out;
}

FlopEstimate estimate_flops(const nn::NetConfig& cfg, const nn::Shape& input_shape) {
  const nn::Shape expected = nn::input_shape(cfg, input_shape.n);
  if (!(input_shape == expected))
    throw ShapeError(fmt::format("input shape {} does not match config (expected {})", input_shape.str(),
                                 expected.str()));
  const nn::ParamStore<float> params = nn::init_params<float>(cfg);
  const nn::Prediction<float> pred = nn::predict(cfg, params, nn::Tensor<float>(input_shape),
                                                 nn::Tensor<float>(nn::das_shape(cfg, input_shape.n)));
  FlopEstimate est;
  est.layers = pred.flops;
  for (const auto& r : est.layers) est.total += r.flops;
  return est;
}

FlopEstimate estimate_flops(const nn::NetConfig& cfg) { return estimate_flops(cfg, nn::input_shape(cfg)); }

std::string environment_description() {
  return fmt::format("hardware_threads={}; compiler={}; eigen={}.{}.{}; simd={}",
                     std::thread::hardware_concurrency(), __VERSION__, EIGEN_WORLD_VERSION, EIGEN_MAJOR_VERSION,
                     EIGEN_MINOR_VERSION, Eigen::SimdInstructionSetsInUse());
}

LatencyStats benchmark_latency(const nn::NetConfig& cfg, const nn::ParamStore<float>& params, int n_runs, int warmup) {
  if (n_runs < 1) throw ValidationError("latency benchmark needs at least one run");
  Rng rng(0);
  const nn::Tensor<float> input = random_tensor(nn::input_shape(cfg), rng);
  const nn::Tensor<float> das = random_tensor(nn::das_shape(cfg), rng);
  for (int i = 0; i < warmup; ++i) nn::predict(cfg, params, input, das);
  LatencyStats stats;
  for (int i = 0; i < n_runs; ++i) {
    const auto t0 = std::chrono::steady_clock::now();
    nn::predict(cfg, params, input, das);
    const auto t1 = std::chrono::steady_clock::now();
    stats.runs_s.push_back(std::chrono::duration<double>(t1 - t0).count());
  }
  std::vector<double> sorted = stats.runs_s;
  std::sort(sorted.begin(), sorted.end());
  const std::size_t mid = sorted.size() / 2;
  stats.median_s = sorted.size() % 2 ? sorted[mid] : 0.5 * (sorted[mid - 1] + sorted[mid]);
  stats.mean_s = std::accumulate(sorted.begin(), sorted.end(), 0.0) / sorted.size();
  for (double t : sorted) stats.variance_s2 += (t - stats.mean_s) * (t - stats.mean_s);
  stats.variance_s2 /= sorted.size();
  stats.environment = environment_description();
  return stats;
}

LatencyStats benchmark_latency(const fs::path& checkpoint, int n_runs, int warmup) {
  const nn::Checkpoint ckpt = nn::load_checkpoint(checkpoint);
  return benchmark_latency(ckpt.config, ckpt.params, n_runs, warmup);
}

ComplexityReport complexity(const nn::NetConfig& cfg, const nn::ParamStore<float>& params, int n_runs) {
  ComplexityReport r;
  r.n_params = nn::count_params(params);
  const FlopEstimate f = estimate_flops(cfg);
  r.flops_per_sample = f.total;
  r.layers = f.layers;
  r.latency = benchmark_latency(cfg, params, n_runs);
  return r;
}

namespace {

json report_json(const ComplexityReport& r) {
  json layers = json::array();
  for (const auto& l : r.layers) layers.push_back({{"label", l.label}, {"kind", l.kind}, {"flops", l.flops}});
  return {{"n_params", r.n_params},
          {"flops_per_sample", r.flops_per_sample},
          {"gflops_per_sample", r.flops_per_sample / 1e9},
          {"latency_s", {{"median", r.latency.median_s},
                         {"mean", r.latency.mean_s},
                         {"variance", r.latency.variance_s2},
                         {"runs", r.latency.runs_s}}},
          {"layers", layers}};
}

}  // namespace

std::string complexity_json(const ComplexityReport& ft, const ComplexityReport* no_ft) {
  json j;
  j["ft"] = report_json(ft);
  j["environment"] = ft.latency.environment;
  if (no_ft) {
    j["no_ft"] = report_json(*no_ft);
    const double pr = static_cast<double>(ft.n_params) / no_ft->n_params;
    const double fr = ft.flops_per_sample / no_ft->flops_per_sample;
    j["ratios"] = {{"params", pr},
                   {"flops", fr},
                   {"latency", ft.latency.median_s / no_ft->latency.median_s},
                   {"params_reduction_percent", 100.0 * (1.0 - pr)},
                   {"flops_reduction_percent", 100.0 * (1.0 - fr)}};
  }
  return j.dump(2) + "\n";
}

}  // namespace asnet
