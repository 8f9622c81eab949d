// Acceptance suite. Prints one PASS/FAIL line per criterion and exits
// non-zero if any selected criterion fails.
//
//   asnet_acceptance [--criteria 1-8|9-11|all|3,5] [--work DIR] [--threads K]

#include "asnet/beamform.hpp"
#include "asnet/fold.hpp"
#include "asnet/metrics.hpp"
#include "asnet/simulate.hpp"
#include "asnet/train.hpp"

#include "support/grad_check.hpp"

#include <CLI11.hpp>
#include <fmt/format.h>

#include <chrono>
#include <cstring>
#include <filesystem>
#include <functional>
#include <iostream>
#include <limits>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

using namespace asnet;
using namespace asnet::nn;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

class Stopwatch {
 public:
  double seconds() const {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
  }

 private:
  std::chrono::steady_clock::time_point start_ = std::chrono::steady_clock::now();
};

ArrayGeometry ring(int elements, int grid) {
  return make_geometry(elements, 0.018, 0.0127, grid, 1500.0, 40e6, 5e6, 0.8);
}

ImageGrid point_image(int side, int row, int col) {
  ImageGrid img;
  img.data = RowMatrixXf::Zero(side, side);
  img.data(row, col) = 1.0f;
  img.fov_m = 0.0127;
  return img;
}

// ---------------------------------------------------------------------------

Outcome fold_reversibility() {
  Stopwatch clock;
  Rng rng(101);
  int identical = 0;
  const int trials = 1000;
  for (int t = 0; t < trials; ++t) {
    const int m = rng.uniform_int(1, 4096);
    const int n = rng.uniform_int(1, 128);
    RawSignalMatrix s{RowMatrixXf(m, n), 40e6};
    for (Eigen::Index i = 0; i < s.data.size(); ++i) s.data.data()[i] = static_cast<float>(rng.normal());
    const RawSignalMatrix back = unfold(fold(s, 128), m, n, s.fs_hz);
    if (back.data.rows() == m && back.data.cols() == n &&
        std::memcmp(back.data.data(), s.data.data(), sizeof(float) * s.data.size()) == 0)
      ++identical;
  }
  const double secs = clock.seconds();
  return {identical == trials && secs < 10.0,
          fmt::format("{}/{} bit-identical round trips in {:.2f} s (limit 10 s)", identical, trials, secs)};
}

Outcome fold_shapes() {
  const RawSignalMatrix a{RowMatrixXf::Zero(1500, 32), 40e6};
  const RawSignalMatrix b{RowMatrixXf::Zero(2560, 128), 40e6};
  const FoldedTensor fa = fold(a, 128);
  const FoldedTensor fb = fold(b, 128);
  const bool ok = fa.q == 12 && fa.side == 128 && fa.data.size() == 12 * 128 * 128 && fa.pad_time == 36 &&
                  fa.pad_sensors == 96 && fb.q == 20 && fb.side == 128 && fb.data.size() == 20 * 128 * 128 &&
                  fb.pad_time == 0 && fb.pad_sensors == 0;
  return {ok, fmt::format("1500x32 -> {}x{}x{} (pads {}, {}); 2560x128 -> {}x{}x{}", fa.q, fa.side, fa.side,
                          fa.pad_time, fa.pad_sensors, fb.q, fb.side, fb.side)};
}

Outcome das_point_sources() {
  Stopwatch clock;
  const int side = 128;
  const ArrayGeometry g = ring(32, side);
  Rng rng(303);
  int hits = 0;
  const int trials = 50;
  for (int t = 0; t < trials; ++t) {
    const int r = rng.uniform_int(0, side - 1);
    const int c = rng.uniform_int(0, side - 1);
    const ImageGrid img = das_reconstruct(forward_project(point_image(side, r, c), g, 2560), g);
    Eigen::Index pr, pc;
    img.data.maxCoeff(&pr, &pc);
    if (std::abs(pr - r) <= 1 && std::abs(pc - c) <= 1) ++hits;
  }
  const double secs = clock.seconds();
  return {hits >= 48 && secs < 60.0,
          fmt::format("{}/{} peaks within 1 pixel (need 48) in {:.1f} s (limit 60 s)", hits, trials, secs)};
}

// Zero crossing between the main positive and negative lobes, by linear
// interpolation.
double zero_crossing(const RowMatrixXf& s, int col) {
  Eigen::Index hi, lo;
  s.col(col).maxCoeff(&hi);
  s.col(col).minCoeff(&lo);
  const Eigen::Index a = std::min(hi, lo), b = std::max(hi, lo);
  for (Eigen::Index i = a; i < b; ++i) {
    const double y0 = s(i, col), y1 = s(i + 1, col);
    if (y0 == 0.0) return static_cast<double>(i);
    if ((y0 > 0) != (y1 > 0)) return i + y0 / (y0 - y1);
  }
  return std::numeric_limits<double>::quiet_NaN();
}

Outcome time_of_flight() {
  double worst = 0.0;
  std::string detail;
  // Odd grid: a pixel sits exactly on the ring centre. Even grid: the pixel
  // nearest the centre is half a pitch off in both axes.
  for (int side : {129, 128}) {
    const ArrayGeometry g = ring(32, side);
    const RawSignalMatrix s = forward_project(point_image(side, side / 2, side / 2), g, 768);
    double lo = 1e9, hi = -1e9;
    for (int j = 0; j < s.n(); ++j) {
      const double z = zero_crossing(s.data, j);
      lo = std::min(lo, z);
      hi = std::max(hi, z);
      worst = std::max(worst, std::isfinite(z) ? std::abs(z - 480.0) : 1e9);
    }
    detail += fmt::format("N={}: crossings in [{:.2f}, {:.2f}]; ", side, lo, hi);
  }
  return {worst <= 2.0, detail + fmt::format("max |t - 480| = {:.2f} samples (limit 2)", worst)};
}

Outcome metric_fidelity() {
  const Eigen::ArrayXXd x = Eigen::ArrayXXd::Random(32, 32) * 0.5 + 0.5;
  const double s_xx = ssim(x, x);
  const double s_01 = ssim(Eigen::ArrayXXd::Zero(16, 16), Eigen::ArrayXXd::Ones(16, 16));
  const double expected = kSsimC1 / (1.0 + kSsimC1);
  const double p = psnr(Eigen::ArrayXXd::Constant(16, 16, 0.5), Eigen::ArrayXXd::Ones(16, 16));
  const bool l1 = smooth_l1_point(0.0) == 0.0 && smooth_l1_point(0.5) == 0.125 && smooth_l1_point(1.0) == 0.5 &&
                  smooth_l1_point(2.0) == 1.5;
  const bool ok = s_xx == 1.0 && std::abs(s_01 - expected) < 1e-9 && std::abs(p - 6.0206) < 1e-3 && l1;
  return {ok, fmt::format("ssim(x,x)={:.17g}, ssim(0,1)-c1/(1+c1)={:.2e}, psnr(0.5,1)={:.5f} dB, smooth-L1 {}",
                          s_xx, s_01 - expected, p, l1 ? "exact" : "wrong")};
}

Outcome gradient_suite() {
  using testing::check_gradients;
  using testing::random_params;
  using testing::random_tensor;
  using testing::subset;
  Stopwatch clock;
  NetConfig cfg;
  cfg.in_channels_q = 4;
  cfg.side = 16;
  cfg.enc_widths = {4, 8, 8, 8};
  cfg.sfe_width = 4;
  const ParamSpecs specs = param_specs(cfg);
  Rng rng(606);

  struct Case {
    std::string name;
    std::vector<std::string> prefixes;
    std::vector<std::pair<std::string, Shape>> inputs;
    testing::Builder build;
  };
  const std::vector<Case> cases{
      {"gc", {"bpr.enc4.gc"}, {{"x", {1, 8, 12, 12}}},
       [](Binder<double>& p) { return gc_layer(p, p("x"), "bpr.enc4.gc"); }},
      {"atrous", {"bpr.bottom"}, {{"x", {1, 8, 12, 12}}},
       [](Binder<double>& p) { return atrous_inception(p, p("x"), "bpr.bottom"); }},
      {"down", {"bpr.enc2."}, {{"x", {1, 4, 12, 12}}},
       [](Binder<double>& p) { return down_block(p, p("x"), "bpr.enc2"); }},
      {"up", {"bpr.dec2"}, {{"x", {1, 8, 6, 6}}},
       [](Binder<double>& p) { return up_stage(p, p("x"), "bpr.dec2"); }},
      {"ff2", {"ff2."}, {{"x", {1, 4, 12, 12}}, {"f", {1, 4, 12, 12}}},
       [](Binder<double>& p) { return ff2(p, p("x"), p("f")); }},
      {"losses", {}, {{"a", {1, 1, 12, 12}}, {"b", {1, 1, 12, 12}}, {"y", {1, 1, 12, 12}}},
       [](Binder<double>& p) {
         auto& g = p.graph();
         return weighted_sum<double>(g, {smooth_l1_loss(g, p("a"), p("y")), smooth_l1_loss(g, p("b"), p("y"))},
                                     {0.2, 1.0});
       }},
  };
  double worst = 0.0;
  std::string where;
  int checked = 0, skipped = 0;
  for (const Case& c : cases) {
    ParamStore<double> store = c.prefixes.empty() ? ParamStore<double>{} : random_params(subset(specs, c.prefixes), 7);
    for (const auto& [name, shape] : c.inputs) store.emplace(name, random_tensor(shape, rng, -2.0, 2.0));
    const auto r = check_gradients(store, c.build, 24, 11);
    checked += r.checked;
    skipped += r.skipped;
    if (r.max_rel_error >= worst) {
      worst = r.max_rel_error;
      where = c.name + ":" + r.worst;
    }
  }
  const double secs = clock.seconds();
  return {worst < 1e-3 && secs < 300.0 && skipped * 10 < checked,
          fmt::format("{} blocks, {} entries ({} at ReLU kinks skipped), max rel error {:.2e} at {} (limit 1e-3), "
                      "{:.1f} s",
                      cases.size(), checked, skipped, worst, where, secs)};
}

Outcome gc_invariants() {
  using testing::random_tensor;
  Rng rng(707);
  double sum_err = 0.0, identity_err = 0.0, shift_err = 0.0;
  for (int trial = 0; trial < 20; ++trial) {
    const int c = rng.uniform_int(1, 16), h = rng.uniform_int(1, 24), w = rng.uniform_int(1, 24);
    const Tensor<float> x = random_tensor(Shape{2, c, h, w}, rng, -3, 3).cast<float>();
    const Tensor<float> wk = random_tensor(Shape{1, c, 1, 1}, rng, -2, 2).cast<float>();
    const Tensor<float> wv = random_tensor(Shape{c, c, 1, 1}, rng).cast<float>();
    const Tensor<float> bk0(Shape{1, 1, 1, 1});
    const Tensor<float> bk1(Shape{1, 1, 1, 1}, static_cast<float>(rng.uniform(-10, 10)));
    Graph<float> g(false);
    const Var xv = g.input(x);
    const Var a = gc_block(g, xv, g.input(wk), g.input(bk0), g.input(wv));
    const Var b = gc_block(g, xv, g.input(wk), g.input(bk1), g.input(wv));
    const Var z = gc_block(g, xv, g.input(wk), g.input(bk1), g.input(Tensor<float>(wv.shape())));
    for (int n = 0; n < 2; ++n) sum_err = std::max(sum_err, std::abs(double(g.aux(a).item(n).sum()) - 1.0));
    identity_err = std::max(identity_err, double((g.value(z).array() - x.array()).abs().maxCoeff()));
    const double scale = std::max(1e-30, double(g.value(a).array().abs().maxCoeff()));
    shift_err = std::max(shift_err, (g.value(a).array() - g.value(b).array()).abs().maxCoeff() / scale);
  }
  const bool ok = sum_err <= 1e-6 && identity_err == 0.0 && shift_err < 1e-6;
  return {ok, fmt::format("|sum(att)-1| {:.2e} (limit 1e-6), W_v=0 deviation {:.1e} (exact), logit shift {:.2e} "
                          "relative (limit 1e-6)",
                          sum_err, identity_err, shift_err)};
}

Outcome stem_complexity() {
  bool ok = true;
  std::string detail;
  for (const auto& [name, ft] : {std::pair{"desk", NetConfig::desk(12)}, std::pair{"full-scale", NetConfig::paper(20)}}) {
    const NetConfig raw = apply_ablation(ft, Ablation::no_ft);
    const auto p_ft = count_params(ft), p_raw = count_params(raw);
    const double f_ft = estimate_flops(ft).total, f_raw = estimate_flops(raw).total;
    ok = ok && p_ft < p_raw && f_ft < f_raw;
    detail += fmt::format("{}: params {} vs {} (-{:.3f}%), FLOPs {:.4g} vs {:.4g} (-{:.2f}%); ", name, p_ft, p_raw,
                          100.0 * (1.0 - double(p_ft) / p_raw), f_ft, f_raw, 100.0 * (1.0 - f_ft / f_raw));
  }
  detail.resize(detail.size() - 2);
  return {ok, detail};
}

// ---------------------------------------------------------------------------
// Training criteria share two independent runs (a, b) of the whole pipeline.

struct PipelineRun {
  fs::path dir;
  std::map<Ablation, EvalReport> reports;
  std::string table;
  std::string failure;
};

PipelineRun run_pipeline(const fs::path& dir, int threads) {
  PipelineRun run;
  run.dir = dir;
  fs::remove_all(dir);
  const ArrayGeometry geom = ring(32, 64);
  PhantomConfig train_ph;
  train_ph.seed = 1;
  PhantomConfig test_ph;
  test_ph.seed = 2;
  simulate_dataset(train_ph, geom, 200, 768, dir / "train", Split::train);
  simulate_dataset(test_ph, geom, 40, 768, dir / "test", Split::test);
  const DatasetManifest manifest = DatasetReader(dir / "train").manifest();

  std::vector<std::pair<std::string, EvalReport>> rows;
  for (Ablation a : kAllAblations) {
    Stopwatch clock;
    TrainConfig tc;
    tc.seed = 3;
    tc.threads = threads;
    tc.ablation = a;
    tc = apply_ablation(tc, a);
    const NetConfig nc = net_config_for(manifest, false, a, tc.seed);
    const fs::path out = dir / to_string(a);
    try {
      const TrainResult r = train(dir / "train", tc, nc, out);
      const EvalReport rep = evaluate(r.checkpoint, dir / "test", threads);
      write_text(out / "eval.json", eval_json(rep));
      write_text(out / "eval.csv", eval_csv(rep));
      run.reports[a] = rep;
      rows.emplace_back(to_string(a), rep);
      const MethodSummary& s = rep.summary.at("asnet");
      std::cout << fmt::format("  {}: {:8s} final loss {:.6f}  SSIM {:.4f}  PSNR {:.2f} dB  ({:.0f} s)\n",
                               dir.filename().string(), to_string(a), r.epochs.back().loss, s.ssim_mean,
                               s.psnr_mean, clock.seconds())
                << std::flush;
    } catch (const std::exception& e) {
      run.failure += fmt::format("{}: {}; ", to_string(a), e.what());
    }
  }
  run.table = ablation_table_markdown(rows);
  write_text(dir / "ablation.md", run.table);
  write_text(dir / "ablation.csv", ablation_table_csv(rows));
  return run;
}

Outcome end_to_end(const PipelineRun& run) {
  const auto it = run.reports.find(Ablation::full);
  if (it == run.reports.end()) return {false, "full preset did not finish: " + run.failure};
  const MethodSummary& net = it->second.summary.at("asnet");
  const MethodSummary& das = it->second.summary.at("das_sparse");
  const bool ok = net.ssim_mean >= das.ssim_mean + 0.10 && net.psnr_mean - das.psnr_mean > 0.0;
  return {ok, fmt::format("SSIM {:.4f} vs DAS {:.4f} (need +0.10), PSNR {:.2f} vs {:.2f} dB (+{:.2f})", net.ssim_mean,
                          das.ssim_mean, net.psnr_mean, das.psnr_mean, net.psnr_mean - das.psnr_mean)};
}

Outcome ablation_harness(const PipelineRun& run) {
  const bool ok = run.reports.size() == kAllAblations.size() && run.failure.empty();
  std::string detail = fmt::format("{}/{} presets completed, report at {}", run.reports.size(), kAllAblations.size(),
                                   (run.dir / "ablation.md").string());
  if (!run.failure.empty()) detail += "; " + run.failure;
  return {ok, detail};
}

Outcome determinism(const PipelineRun& a, const PipelineRun& b) {
  std::vector<std::string> files{"ablation.md", "ablation.csv"};
  for (Ablation p : kAllAblations)
    for (const char* f : {"loss.csv", "eval.json", "eval.csv", "checkpoint.bin"}) files.push_back(to_string(p) + "/" + f);
  int same = 0;
  std::string diff;
  for (const auto& f : files) {
    bool equal = false;
    if (fs::exists(a.dir / f) && fs::exists(b.dir / f)) equal = read_text(a.dir / f) == read_text(b.dir / f);
    if (equal) {
      ++same;
    } else {
      diff += " " + f;
    }
  }
  const bool ok = same == static_cast<int>(files.size());
  return {ok, fmt::format("{}/{} artifacts byte-identical across reruns{}", same, files.size(),
                          diff.empty() ? "" : " (differ:" + diff + ")")};
}

std::set<int> parse_selection(const std::string& text) {
  std::set<int> out;
  if (text == "all") {
    for (int i = 1; i <= 11; ++i) out.insert(i);
    return out;
  }
  std::stringstream ss(text);
  std::string part;
  while (std::getline(ss, part, ',')) {
    const auto dash = part.find('-');
    const int lo = std::stoi(part.substr(0, dash));
    const int hi = dash == std::string::npos ? lo : std::stoi(part.substr(dash + 1));
    for (int i = lo; i <= hi; ++i) out.insert(i);
  }
  return out;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app("Acceptance criteria");
  std::string selection = "all";
  fs::path work = fs::temp_directory_path() / "asnet_acceptance";
  int threads = 1;
  app.add_option("--criteria", selection, "Criteria to run: all, a range such as 1-8, or a list")->capture_default_str();
  app.add_option("--work", work, "Scratch directory for the training criteria")->capture_default_str();
  app.add_option("--threads", threads, "Worker threads")->capture_default_str()->check(CLI::PositiveNumber);
  CLI11_PARSE(app, argc, argv);

  std::set<int> selected;
  try {
    selected = parse_selection(selection);
  } catch (const std::exception&) {
    std::cerr << "bad --criteria value: " << selection << '\n';
    return 2;
  }

  const std::vector<std::pair<std::string, std::function<Outcome()>>> fast{
      {"fold reversibility", fold_reversibility}, {"fold shape law", fold_shapes},
      {"DAS point-source localisation", das_point_sources}, {"forward-model time of flight", time_of_flight},
      {"metric fidelity", metric_fidelity}, {"gradient suite", gradient_suite},
      {"global-context invariants", gc_invariants}, {"folded stem complexity", stem_complexity}};

  int failed = 0;
  auto report = [&](int id, const std::string& name, const Outcome& o) {
    std::cout << fmt::format("{} criterion {:2d} ({}): {}\n", o.pass ? "PASS" : "FAIL", id, name, o.detail)
              << std::flush;
    if (!o.pass) ++failed;
  };
  auto guarded = [](const std::function<Outcome()>& f) {
    try {
      return f();
    } catch (const std::exception& e) {
      return Outcome{false, std::string("exception: ") + e.what()};
    }
  };

  for (int id = 1; id <= 8; ++id)
    if (selected.count(id)) report(id, fast[id - 1].first, guarded(fast[id - 1].second));

  if (selected.count(9) || selected.count(10) || selected.count(11)) {
    std::cout << "training the five presets twice under " << work.string() << '\n' << std::flush;
    const PipelineRun a = run_pipeline(work / "a", threads);
    const PipelineRun b = selected.count(11) ? run_pipeline(work / "b", threads) : PipelineRun{};
    std::cout << a.table << std::flush;
    if (selected.count(9)) report(9, "end-to-end desk training", guarded([&] { return end_to_end(a); }));
    if (selected.count(10)) report(10, "ablation harness", guarded([&] { return ablation_harness(a); }));
    if (selected.count(11)) report(11, "determinism", guarded([&] { return determinism(a, b); }));
  }
  return failed == 0 ? 0 : 1;
}
