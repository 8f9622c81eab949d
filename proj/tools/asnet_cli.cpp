// asnet: command-line front end for simulation, folding, beamforming,
// training, evaluation, complexity reporting and rendering.

#include "asnet/beamform.hpp"
#include "asnet/core.hpp"
#include "asnet/fold.hpp"
#include "asnet/nn/checkpoint.hpp"
#include "asnet/simulate.hpp"
#include "asnet/train.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <cmath>
#include <filesystem>
#include <iostream>
#include <set>
#include <string>
#include <vector>

#include <fmt/format.h>

namespace fs = std::filesystem;
using namespace asnet;

namespace {

struct Common {
  std::uint64_t seed = 0;
  fs::path out;
  int threads = 1;
  bool deterministic = false;
  bool paper_scale = false;
};

void add_common(CLI::App* sub, Common& c) {
  sub->add_option("--seed", c.seed, "Seed for every random choice")->capture_default_str();
  sub->add_option("--out", c.out, "Output directory")->required();
  sub->add_option("--threads", c.threads, "Maximum worker threads")->capture_default_str()->check(CLI::PositiveNumber);
  sub->add_flag("--deterministic", c.deterministic, "Require bit-identical results for identical inputs");
  sub->add_flag("--paper-scale", c.paper_scale, "Use full-scale defaults instead of desk-scale ones");
}

// A bare geometry object, or a dataset manifest holding one.
ArrayGeometry read_geometry(const fs::path& path) {
  const std::string text = read_text(path);
  const auto j = nlohmann::json::parse(text, nullptr, false);
  if (j.is_object() && j.contains("geometry")) return manifest_from_json(text).geometry;
  return geometry_from_json(text);
}

std::size_t edit_distance(const std::string& a, const std::string& b) {
  std::vector<std::size_t> row(b.size() + 1);
  for (std::size_t j = 0; j <= b.size(); ++j) row[j] = j;
  for (std::size_t i = 1; i <= a.size(); ++i) {
    std::size_t diag = row[0];
    row[0] = i;
    for (std::size_t j = 1; j <= b.size(); ++j) {
      const std::size_t up = row[j];
      row[j] = std::min({row[j] + 1, row[j - 1] + 1, diag + (a[i - 1] != b[j - 1] ? 1 : 0)});
      diag = up;
    }
  }
  return row[b.size()];
}

// Closest known long flag to each unrecognised one.
std::string suggestions(const CLI::App& app, int argc, char** argv) {
  const CLI::App* scope = &app;
  std::string out;
  if (argc > 1) {
    const auto subs = app.get_subcommands([](const CLI::App*) { return true; });
    for (const CLI::App* sub : subs)
      if (sub->get_name() == argv[1]) scope = sub;
    if (scope == &app && argv[1][0] != '-') {
      std::string best;
      std::size_t best_d = 4;
      for (const CLI::App* sub : subs) {
        const std::size_t d = edit_distance(argv[1], sub->get_name());
        if (d < best_d) {
          best_d = d;
          best = sub->get_name();
        }
      }
      if (!best.empty()) out += fmt::format("unknown subcommand {}: did you mean {}?\n", argv[1], best);
    }
  }
  std::set<std::string> known{"--help"};
  for (const CLI::Option* opt : scope->get_options())
    for (const auto& name : opt->get_lnames()) known.insert("--" + name);
  for (int i = 1; i < argc; ++i) {
    std::string token = argv[i];
    if (token.rfind("--", 0) != 0) continue;
    token = token.substr(0, token.find('='));
    if (known.count(token)) continue;
    std::string best;
    std::size_t best_d = 4;
    for (const auto& k : known) {
      const std::size_t d = edit_distance(token, k);
      if (d < best_d) {
        best_d = d;
        best = k;
      }
    }
    if (!best.empty()) out += fmt::format("unknown flag {}: did you mean {}?\n", token, best);
  }
  return out;
}

void log(const std::string& msg) { std::cerr << msg << '\n'; }

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Sparse-view photoacoustic reconstruction toolkit", "asnet"};
  app.require_subcommand(1);

  // simulate
  Common sim_c;
  int sim_n = 0, sim_elements = 32, sim_points = 0, sim_grid = 0, sim_dense = 128;
  double sim_radius_mm = 18.0, sim_fs_mhz = 40.0, sim_fov_mm = 12.7, sim_speed = 1500.0, sim_fc_mhz = 5.0,
         sim_bw = 0.8, sim_noise = 0.0;
  std::string sim_split = "train", sim_gt = "phantom";
  auto* sim = app.add_subcommand("simulate", "Generate a synthetic phantom dataset");
  sim->add_option("--n", sim_n, "Number of samples")->required()->check(CLI::PositiveNumber);
  sim->add_option("--elements", sim_elements, "Sparse transducer elements")->capture_default_str();
  sim->add_option("--radius-mm", sim_radius_mm, "Ring radius in mm")->capture_default_str();
  sim->add_option("--fs-mhz", sim_fs_mhz, "Sampling rate in MHz")->capture_default_str();
  sim->add_option("--points", sim_points, "Time samples per channel (default 768, or 2560 with --paper-scale)");
  sim->add_option("--grid", sim_grid, "Image side in pixels (default 64, or 128 with --paper-scale)");
  sim->add_option("--fov-mm", sim_fov_mm, "Square field of view in mm")->capture_default_str();
  sim->add_option("--speed-mps", sim_speed, "Speed of sound in m/s")->capture_default_str();
  sim->add_option("--center-mhz", sim_fc_mhz, "Transducer centre frequency in MHz")->capture_default_str();
  sim->add_option("--bandwidth", sim_bw, "Fractional bandwidth")->capture_default_str();
  sim->add_option("--split", sim_split, "Split label (train or test)")->capture_default_str();
  sim->add_option("--ground-truth", sim_gt, "Target image (phantom or dense_das)")->capture_default_str();
  sim->add_option("--dense-elements", sim_dense, "Element count of the dense array for dense_das targets")
      ->capture_default_str();
  sim->add_option("--noise", sim_noise, "Std of additive Gaussian noise relative to the signal peak")
      ->capture_default_str();
  add_common(sim, sim_c);

  // fold
  Common fold_c;
  fs::path fold_in;
  int fold_m = 0, fold_n = 0, fold_side = 128;
  auto* fold_cmd = app.add_subcommand("fold", "Fold a time x sensor signal into a q x side x side cube");
  fold_cmd->add_option("--in", fold_in, "Signal file (float32, m x n row-major)")->required();
  fold_cmd->add_option("--m", fold_m, "Time samples")->required()->check(CLI::PositiveNumber);
  fold_cmd->add_option("--n", fold_n, "Sensors")->required()->check(CLI::PositiveNumber);
  fold_cmd->add_option("--side", fold_side, "Folded side")->capture_default_str()->check(CLI::PositiveNumber);
  add_common(fold_cmd, fold_c);

  // das
  Common das_c;
  fs::path das_data, das_in, das_geom;
  int das_index = -1, das_m = 0;
  auto* das_cmd = app.add_subcommand("das", "Delay-and-sum reconstruction of a signal file or dataset signals");
  auto* das_data_opt = das_cmd->add_option("--data", das_data, "Dataset directory");
  auto* das_in_opt = das_cmd->add_option("--in", das_in, "Signal file (float32, m x n row-major)");
  das_cmd->add_option("--geometry", das_geom, "Geometry JSON (or a dataset manifest) for --in")->needs(das_in_opt);
  das_cmd->add_option("--m", das_m, "Time samples in --in (default: inferred from the file size)")->needs(das_in_opt);
  das_cmd->add_option("--index", das_index, "Single sample index (default: all samples)")->needs(das_data_opt);
  das_in_opt->excludes(das_data_opt)->needs("--geometry");
  das_cmd->require_option(1, 0);
  add_common(das_cmd, das_c);

  // train
  Common train_c;
  fs::path train_data;
  int train_epochs = 0, train_batch = 0;
  double train_lr = 0.005;
  std::string train_ablation = "full";
  auto* train_cmd = app.add_subcommand("train", "Train the network on a dataset");
  train_cmd->add_option("--data", train_data, "Training dataset directory")->required();
  train_cmd->add_option("--epochs", train_epochs, "Epochs (default 60, or 600 with --paper-scale)");
  train_cmd->add_option("--batch-size", train_batch, "Batch size (default 8, or 16 with --paper-scale)");
  train_cmd->add_option("--lr", train_lr, "Initial learning rate")->capture_default_str();
  train_cmd->add_option("--ablation", train_ablation, "Preset: full, no_ft, no_sfe, no_bpr or no_aux")
      ->capture_default_str();
  add_common(train_cmd, train_c);

  // eval
  Common eval_c;
  fs::path eval_ckpt, eval_data;
  auto* eval_cmd = app.add_subcommand("eval", "Score a checkpoint and sparse DAS on a dataset");
  eval_cmd->add_option("--checkpoint", eval_ckpt, "Checkpoint file")->required();
  eval_cmd->add_option("--data", eval_data, "Test dataset directory")->required();
  add_common(eval_cmd, eval_c);

  // complexity
  Common cx_c;
  fs::path cx_config, cx_ckpt;
  bool cx_compare = false;
  int cx_runs = 20, cx_q = 0, cx_side = 0;
  auto* cx = app.add_subcommand("complexity", "Report parameters, FLOPs and latency");
  cx->add_option("--config", cx_config, "Network config JSON");
  cx->add_option("--checkpoint", cx_ckpt, "Checkpoint file (config and weights)");
  cx->add_option("--q", cx_q, "Folded channels when no config is given (default 12, or 20 with --paper-scale)");
  cx->add_option("--side", cx_side, "Image side when no config is given (default 64, or 128 with --paper-scale)");
  cx->add_flag("--compare-no-ft", cx_compare, "Also report the raw-signal stem variant and the ratios");
  cx->add_option("--runs", cx_runs, "Timed forward passes")->capture_default_str()->check(CLI::PositiveNumber);
  add_common(cx, cx_c);

  // render
  Common render_c;
  fs::path render_in;
  int render_side = 0;
  auto* render = app.add_subcommand("render", "Write an image file as an 8-bit PGM");
  render->add_option("--in", render_in, "Image file (float32, side x side)")->required();
  render->add_option("--side", render_side, "Image side (default: inferred from the file size)");
  add_common(render, render_c);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << "error: " << e.what() << '\n' << suggestions(app, argc, argv);
    std::cerr << "run 'asnet " << (argc > 1 ? std::string(argv[1]) + " " : "") << "--help' for usage\n";
    return 2;
  }

  try {
    if (*sim) {
      const int points = sim_points > 0 ? sim_points : (sim_c.paper_scale ? 2560 : 768);
      const int grid = sim_grid > 0 ? sim_grid : (sim_c.paper_scale ? 128 : 64);
      const ArrayGeometry geom = make_geometry(sim_elements, sim_radius_mm * 1e-3, sim_fov_mm * 1e-3, grid,
                                               sim_speed, sim_fs_mhz * 1e6, sim_fc_mhz * 1e6, sim_bw);
      PhantomConfig pc;
      pc.seed = sim_c.seed;
      pc = pc.scaled(grid / 64.0);
      SimulationOptions opts;
      opts.dense_elements = sim_dense;
      opts.ground_truth = ground_truth_from_string(sim_gt);
      opts.noise_std = sim_noise;
      const DatasetManifest man = simulate_dataset(pc, geom, sim_n, points, sim_c.out, split_from_string(sim_split), opts);
      log(fmt::format("wrote {} samples ({}x{} signals, {}x{} images) to {}", man.n_samples, man.signal_m,
                      man.signal_n, man.image_side, man.image_side, sim_c.out.string()));
    } else if (*fold_cmd) {
      const RawSignalMatrix s = read_signal(fold_in, fold_m, fold_n, 0.0);
      const FoldedTensor f = fold(s, fold_side);
      fs::create_directories(fold_c.out);
      const std::string stem = fold_in.stem().string();
      write_f32(fold_c.out / (stem + ".folded.f32"), f.data.data(), static_cast<std::size_t>(f.data.size()));
      write_text(fold_c.out / (stem + ".folded.json"), fold_sidecar_json(f, fold_m, fold_n));
      log(fmt::format("folded {}x{} -> {}x{}x{}", fold_m, fold_n, f.q, f.side, f.side));
    } else if (*das_cmd && !das_in.empty()) {
      const ArrayGeometry geom = read_geometry(das_geom);
      const std::size_t count = read_f32(das_in).size();
      const int n = geom.n_elements;
      int m = das_m;
      if (m <= 0) {
        if (count % static_cast<std::size_t>(n) != 0)
          throw FormatError(fmt::format("{}: {} values are not a multiple of {} sensors", das_in.string(), count, n));
        m = static_cast<int>(count / n);
      }
      const ImageGrid img = normalize_minmax(das_reconstruct(read_signal(das_in, m, n, geom.fs_hz), geom));
      fs::create_directories(das_c.out);
      const std::string stem = das_in.stem().string();
      write_image(das_c.out / (stem + ".das.f32"), img);
      render_pgm(img, das_c.out / (stem + ".das.pgm"));
      log(fmt::format("reconstructed {}x{} signal into {}", m, n, das_c.out.string()));
    } else if (*das_cmd) {
      if (das_data.empty()) throw ValidationError("das needs --data or --in with --geometry");
      const DatasetReader reader(das_data);
      fs::create_directories(das_c.out);
      const int lo = das_index >= 0 ? das_index : 0;
      const int hi = das_index >= 0 ? das_index + 1 : reader.size();
      if (lo >= reader.size()) throw ValidationError(fmt::format("index {} out of range ({} samples)", lo, reader.size()));
      for (int i = lo; i < hi; ++i) {
        const ImageGrid img = normalize_minmax(das_reconstruct(reader.signal(i), reader.manifest().geometry));
        write_image(das_c.out / fmt::format("das_{:05d}.f32", i), img);
        render_pgm(img, das_c.out / fmt::format("das_{:05d}.pgm", i));
      }
      log(fmt::format("reconstructed {} samples into {}", hi - lo, das_c.out.string()));
    } else if (*train_cmd) {
      TrainConfig tc = train_c.paper_scale ? TrainConfig::paper() : TrainConfig{};
      if (train_epochs > 0) tc.epochs = train_epochs;
      if (train_batch > 0) tc.batch_size = train_batch;
      tc.base_lr = train_lr;
      tc.seed = train_c.seed;
      tc.threads = train_c.threads;
      tc.deterministic = train_c.deterministic;
      const Ablation a = ablation_from_string(train_ablation);
      tc = apply_ablation(tc, a);
      const DatasetReader reader(train_data);
      const nn::NetConfig nc = net_config_for(reader.manifest(), train_c.paper_scale, a, train_c.seed);
      log(fmt::format("training {} ({} parameters) on {} samples for {} epochs", to_string(a), nn::count_params(nc),
                      reader.size(), tc.epochs));
      const TrainResult r = train(train_data, tc, nc, train_c.out, [](const EpochLog& e) {
        log(fmt::format("epoch {:4d}  lr {:.2e}  loss {:.6f}  recon {:.6f}  aux {:.6f}", e.epoch, e.lr, e.loss,
                        e.recon, e.aux));
      });
      log(fmt::format("checkpoint: {}", r.checkpoint.string()));
    } else if (*eval_cmd) {
      const EvalReport report = evaluate(eval_ckpt, eval_data, eval_c.threads);
      fs::create_directories(eval_c.out);
      write_text(eval_c.out / "eval.csv", eval_csv(report));
      write_text(eval_c.out / "eval.json", eval_json(report));
      for (const auto& [method, s] : report.summary)
        log(fmt::format("{:10s} SSIM {:.4f}±{:.4f}  PSNR {:.2f}±{:.2f} dB  (n={})", method, s.ssim_mean, s.ssim_std,
                        s.psnr_mean, s.psnr_std, s.count));
    } else if (*cx) {
      nn::NetConfig nc;
      nn::ParamStore<float> params;
      if (!cx_ckpt.empty()) {
        nn::Checkpoint ck = nn::load_checkpoint(cx_ckpt);
        nc = ck.config;
        params = std::move(ck.params);
      } else {
        if (!cx_config.empty()) {
          nc = nn::net_config_from_json(read_text(cx_config));
        } else {
          nc = cx_c.paper_scale ? nn::NetConfig::paper() : nn::NetConfig::desk();
          if (cx_q > 0) nc.in_channels_q = cx_q;
          if (cx_side > 0) nc.side = cx_side;
          nc.seed = cx_c.seed;
          nc.validate();
        }
        params = nn::init_params<float>(nc);
      }
      const ComplexityReport ft = complexity(nc, params, cx_runs);
      fs::create_directories(cx_c.out);
      if (cx_compare) {
        nn::NetConfig alt = nc;
        alt.use_ft_stem = !nc.use_ft_stem;
        const ComplexityReport other = complexity(alt, nn::init_params<float>(alt), cx_runs);
        const bool base_is_ft = nc.use_ft_stem;
        write_text(cx_c.out / "complexity.json",
                   complexity_json(base_is_ft ? ft : other, base_is_ft ? &other : &ft));
      } else {
        write_text(cx_c.out / "complexity.json", complexity_json(ft));
      }
      log(fmt::format("params {}  GFLOPs {:.4f}  latency {:.4f} s", ft.n_params, ft.flops_per_sample / 1e9,
                      ft.latency.median_s));
    } else if (*render) {
      const std::vector<float> values = read_f32(render_in);
      int side = render_side;
      if (side <= 0) {
        side = static_cast<int>(std::lround(std::sqrt(static_cast<double>(values.size()))));
        if (static_cast<std::size_t>(side) * side != values.size())
          throw FormatError(fmt::format("{}: {} values do not form a square image; pass --side",
                                        render_in.string(), values.size()));
      }
      const ImageGrid img = read_image(render_in, side, 0.0);
      fs::create_directories(render_c.out);
      const fs::path out = render_c.out / (render_in.stem().string() + ".pgm");
      render_pgm(img, out);
      log(fmt::format("wrote {}", out.string()));
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
