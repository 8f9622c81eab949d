#include "asnet/nn/asnet.hpp"

#include "asnet/fold.hpp"
#include "asnet/simulate.hpp"

#include <json.hpp>

#include <cmath>
#include <set>

#include <fmt/format.h>

namespace asnet::nn {

namespace {

using json = nlohmann::json;

int reduced(int width) { return std::max(1, width / 4); }

void add_conv(ParamSpecs& specs, const std::string& path, int c_in, int c_out, int kh, int kw) {
  specs[path + ".weight"] = {Shape{c_out, c_in, kh, kw}, ParamKind::conv_weight, c_in * kh * kw};
  specs[path + ".bias"] = {Shape{c_out, 1, 1, 1}, ParamKind::bias, c_in * kh * kw};
}

void add_conv_transpose(ParamSpecs& specs, const std::string& path, int c_in, int c_out, int k, int stride) {
  const int fan_in = std::max(1, c_in * k * k / (stride * stride));
  specs[path + ".weight"] = {Shape{c_in, c_out, k, k}, ParamKind::conv_transpose_weight, fan_in};
  specs[path + ".bias"] = {Shape{c_out, 1, 1, 1}, ParamKind::bias, fan_in};
}

void add_gc(ParamSpecs& specs, const std::string& path, int c) {
  specs[path + ".wk"] = {Shape{1, c, 1, 1}, ParamKind::gc_key, c};
  specs[path + ".bk"] = {Shape{1, 1, 1, 1}, ParamKind::gc_key_bias, c};
  specs[path + ".wv"] = {Shape{c, c, 1, 1}, ParamKind::gc_value, c};
}

const std::array<std::vector<int>, 4> kInceptionRates{{{1}, {3}, {1, 3}, {1, 3, 5}}};

}  // namespace

void NetConfig::validate() const {
  if (in_channels_q < 1) throw ValidationError(fmt::format("in_channels_q must be >= 1, got {}", in_channels_q));
  if (side < 16 || side % 16 != 0)
    throw ValidationError(fmt::format("side must be a positive multiple of 16, got {}", side));
  for (int w : enc_widths)
    if (w < 1) throw ValidationError(fmt::format("encoder widths must be >= 1, got {}", w));
  if (sfe_width < 1) throw ValidationError(fmt::format("sfe_width must be >= 1, got {}", sfe_width));
  if (!use_bpr && !use_sfe) throw ValidationError("at least one of the BPR and SFE modules is required");
}

NetConfig NetConfig::desk(int q) {
  NetConfig cfg;
  cfg.in_channels_q = q;
  return cfg;
}

NetConfig NetConfig::paper(int q) {
  NetConfig cfg;
  cfg.in_channels_q = q;
  cfg.side = 128;
  cfg.enc_widths = {32, 64, 128, 256};
  cfg.sfe_width = 64;
  return cfg;
}

std::string net_config_to_json(const NetConfig& cfg) {
  json j;
  j["in_channels_q"] = cfg.in_channels_q;
  j["side"] = cfg.side;
  j["enc_widths"] = cfg.enc_widths;
  j["sfe_width"] = cfg.sfe_width;
  j["use_ft_stem"] = cfg.use_ft_stem;
  j["use_bpr"] = cfg.use_bpr;
  j["use_sfe"] = cfg.use_sfe;
  j["seed"] = cfg.seed;
  return j.dump();
}

NetConfig net_config_from_json(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw FormatError(fmt::format("network config: {}", e.what()));
  }
  const std::set<std::string> expected{"in_channels_q", "side", "enc_widths", "sfe_width",
                                       "use_ft_stem", "use_bpr", "use_sfe", "seed"};
  if (!j.is_object()) throw FormatError("network config: expected an object");
  for (const auto& [key, value] : j.items())
    if (!expected.count(key)) throw FormatError(fmt::format("network config: unknown key '{}'", key));
  NetConfig cfg;
  try {
    for (const auto& key : expected)
      if (!j.contains(key)) throw FormatError(fmt::format("network config: missing key '{}'", key));
    cfg.in_channels_q = j.at("in_channels_q").get<int>();
    cfg.side = j.at("side").get<int>();
    cfg.enc_widths = j.at("enc_widths").get<std::array<int, 4>>();
    cfg.sfe_width = j.at("sfe_width").get<int>();
    cfg.use_ft_stem = j.at("use_ft_stem").get<bool>();
    cfg.use_bpr = j.at("use_bpr").get<bool>();
    cfg.use_sfe = j.at("use_sfe").get<bool>();
    cfg.seed = j.at("seed").get<std::uint64_t>();
  } catch (const json::exception& e) {
    throw FormatError(fmt::format("network config: {}", e.what()));
  }
  cfg.validate();
  return cfg;
}

ParamSpecs param_specs(const NetConfig& cfg) {
  cfg.validate();
  ParamSpecs specs;
  const auto& e = cfg.enc_widths;
  const int s = cfg.sfe_width;
  const int q = cfg.in_channels_q;
  if (cfg.use_bpr) {
    if (!cfg.use_ft_stem) add_conv(specs, "bpr.stem", 1, q, q, 3);
    int c_in = q;
    for (int b = 0; b < 4; ++b) {
      const std::string block = fmt::format("bpr.enc{}", b + 1);
      add_conv(specs, block + ".conv1", c_in, e[b], 3, 3);
      add_conv(specs, block + ".conv2", e[b], e[b], 3, 3);
      c_in = e[b];
    }
    add_gc(specs, "bpr.enc2.gc", e[1]);
    add_gc(specs, "bpr.enc4.gc", e[3]);
    for (std::size_t b = 0; b < kInceptionRates.size(); ++b)
      for (std::size_t k = 0; k < kInceptionRates[b].size(); ++k)
        add_conv(specs, fmt::format("bpr.bottom.b{}.conv{}", b + 1, k + 1), e[3], e[3], 3, 3);
    add_conv(specs, "bpr.bottom.merge", 4 * e[3], e[3], 1, 1);
    const std::array<int, 5> dec{e[3], e[2], e[1], e[0], e[0]};
    for (int d = 0; d < 4; ++d) add_conv_transpose(specs, fmt::format("bpr.dec{}", d + 1), dec[d], dec[d + 1], 3, 2);
    for (int f = 0; f < 4; ++f) add_conv(specs, fmt::format("ff1.fuse{}", f), dec[f] + s, dec[f], 1, 1);
    add_gc(specs, "ff2.gc", e[0] + s);
    add_conv(specs, "ff2.conv1", e[0] + s, e[0], 3, 3);
    add_conv(specs, "ff2.conv2", e[0], e[0], 3, 3);
    add_conv(specs, "ff2.conv3", e[0], 1, 3, 3);
  }
  if (cfg.use_sfe) {
    add_conv(specs, "sfe.stem", 1, s, 3, 3);
    for (int b = 1; b <= 4; ++b) {
      const std::string block = fmt::format("sfe.block{}", b);
      add_conv(specs, block + ".reduce", s, reduced(s), 1, 1);
      add_conv(specs, block + ".conv", reduced(s), reduced(s), 3, 3);
      add_conv(specs, block + ".restore", reduced(s), s, 1, 1);
      add_gc(specs, block + ".gc", s);
    }
    add_conv(specs, "sfe.head", s, 1, 1, 1);
  }
  return specs;
}

template <typename Scalar>
ParamStore<Scalar> init_params(const NetConfig& cfg) {
  ParamStore<Scalar> store;
  Rng rng(cfg.seed);
  for (const auto& [path, spec] : param_specs(cfg)) {
    Tensor<Scalar> t(spec.shape);
    if (spec.kind == ParamKind::conv_weight || spec.kind == ParamKind::conv_transpose_weight ||
        spec.kind == ParamKind::gc_key) {
      const double bound = std::sqrt(6.0 / spec.fan_in);
      for (Eigen::Index i = 0; i < t.size(); ++i) t.data()[i] = static_cast<Scalar>(rng.uniform(-bound, bound));
    }
    store.emplace(path, std::move(t));
  }
  return store;
}

template <typename Scalar>
ParamStore<Scalar> zeros_like(const ParamStore<Scalar>& store) {
  ParamStore<Scalar> out;
  for (const auto& [path, t] : store) out.emplace(path, Tensor<Scalar>(t.shape()));
  return out;
}

std::int64_t count_params(const NetConfig& cfg) {
  std::int64_t total = 0;
  for (const auto& [path, spec] : param_specs(cfg)) total += spec.shape.size();
  return total;
}

template <typename Scalar>
void check_params(const ParamStore<Scalar>& store, const NetConfig& cfg) {
  const ParamSpecs specs = param_specs(cfg);
  for (const auto& [path, spec] : specs) {
    const auto it = store.find(path);
    if (it == store.end()) throw FormatError(fmt::format("parameter '{}' missing", path));
    if (!(it->second.shape() == spec.shape))
      throw FormatError(fmt::format("parameter '{}' has shape {}, config expects {}", path,
                                    it->second.shape().str(), spec.shape.str()));
  }
  for (const auto& [path, t] : store)
    if (!specs.count(path)) throw FormatError(fmt::format("unexpected parameter '{}'", path));
}

template <typename Scalar>
Var Binder<Scalar>::operator()(const std::string& path) {
  const auto it = bound_.find(path);
  if (it != bound_.end()) return it->second;
  const auto found = store_.find(path);
  if (found == store_.end()) throw FormatError(fmt::format("parameter '{}' not in store", path));
  const Var v = graph_.param(path, found->second);
  bound_.emplace(path, v);
  return v;
}

template <typename Scalar>
void Binder<Scalar>::accumulate(ParamStore<Scalar>& grads) {
  for (const auto& [path, v] : bound_) {
    if (!graph_.has_grad(v)) continue;
    grads.at(path).array() += graph_.grad(v).array();
  }
}

template <typename Scalar>
Var conv_layer(Binder<Scalar>& p, Var x, const std::string& path, const ConvGeometry& geo, bool activate) {
  Var y = conv2d(p.graph(), x, p(path + ".weight"), p(path + ".bias"), geo);
  return activate ? relu(p.graph(), y) : y;
}

template <typename Scalar>
Var down_block(Binder<Scalar>& p, Var x, const std::string& path) {
  Var h = conv_layer(p, x, path + ".conv1", ConvGeometry::same(3), true);
  return conv_layer(p, h, path + ".conv2", ConvGeometry::strided(3, 2), true);
}

template <typename Scalar>
Var gc_layer(Binder<Scalar>& p, Var x, const std::string& path) {
  return gc_block(p.graph(), x, p(path + ".wk"), p(path + ".bk"), p(path + ".wv"));
}

template <typename Scalar>
Var atrous_inception(Binder<Scalar>& p, Var x, const std::string& path) {
  auto& g = p.graph();
  const int width = p.graph().shape(x).c;
  const auto& w = g.value(p(path + ".b1.conv1.weight"));
  if (w.shape().c != width)
    throw ShapeError(fmt::format("atrous_inception {}: input has {} channels, block width is {}", path, width,
                                 w.shape().c));
  Var merged;
  for (std::size_t b = 0; b < kInceptionRates.size(); ++b) {
    Var h = x;
    for (std::size_t k = 0; k < kInceptionRates[b].size(); ++k)
      h = conv_layer(p, h, fmt::format("{}.b{}.conv{}", path, b + 1, k + 1),
                     ConvGeometry::same(3, kInceptionRates[b][k]), true);
    merged = merged.valid() ? concat_channels(g, merged, h) : h;
  }
  Var out = conv_layer(p, merged, path + ".merge", ConvGeometry{}, false);
  return add(g, x, out);
}

template <typename Scalar>
Var up_stage(Binder<Scalar>& p, Var x, const std::string& path) {
  Var y = conv_transpose2d(p.graph(), x, p(path + ".weight"), p(path + ".bias"), ConvGeometry::strided(3, 2), 1);
  return relu(p.graph(), y);
}

template <typename Scalar>
BprOutputs<Scalar> bpr_forward(Binder<Scalar>& p, Var input, const NetConfig& cfg, std::span<const Var> pooled) {
  cfg.validate();
  auto& g = p.graph();
  const Shape in = g.shape(input);
  Var h = input;
  if (cfg.use_ft_stem) {
    if (in.c != cfg.in_channels_q || in.h != cfg.side || in.w != cfg.side)
      throw ShapeError(fmt::format("bpr: expected input (B, {}, {}, {}), got {}", cfg.in_channels_q, cfg.side,
                                   cfg.side, in.str()));
  } else {
    const int q = cfg.in_channels_q;
    if (in.c != 1 || in.h != q * cfg.side || in.w != cfg.side)
      throw ShapeError(fmt::format("bpr: expected raw input (B, 1, {}, {}), got {}", q * cfg.side, cfg.side, in.str()));
    h = conv_layer(p, h, "bpr.stem", ConvGeometry{q, 1, 0, 1, 1, 1}, false);
  }
  if (!pooled.empty() && pooled.size() != 4) throw ShapeError("bpr: expected four fusion maps");

  auto fuse = [&](Var x, int stage) {
    if (pooled.empty()) return x;
    Var cat = concat_channels(g, x, pooled[stage]);
    return conv_layer(p, cat, fmt::format("ff1.fuse{}", stage), ConvGeometry{}, true);
  };

  h = down_block(p, h, "bpr.enc1");
  h = down_block(p, h, "bpr.enc2");
  h = gc_layer(p, h, "bpr.enc2.gc");
  h = down_block(p, h, "bpr.enc3");
  h = down_block(p, h, "bpr.enc4");
  h = gc_layer(p, h, "bpr.enc4.gc");

  BprOutputs<Scalar> out;
  out.bottom = atrous_inception(p, h, "bpr.bottom");
  h = fuse(out.bottom, 0);
  for (int d = 0; d < 4; ++d) {
    out.decoder[d] = up_stage(p, h, fmt::format("bpr.dec{}", d + 1));
    if (d < 3) h = fuse(out.decoder[d], d + 1);
  }
  return out;
}

template <typename Scalar>
SfeOutputs<Scalar> sfe_forward(Binder<Scalar>& p, Var das, const NetConfig& cfg) {
  auto& g = p.graph();
  const Shape in = g.shape(das);
  if (in.c != 1 || in.h != cfg.side || in.w != cfg.side)
    throw ShapeError(fmt::format("sfe: expected (B, 1, {}, {}), got {}", cfg.side, cfg.side, in.str()));
  Var h = conv_layer(p, das, "sfe.stem", ConvGeometry::same(3), true);
  for (int b = 1; b <= 4; ++b) {
    const std::string block = fmt::format("sfe.block{}", b);
    Var r = conv_layer(p, h, block + ".reduce", ConvGeometry{}, true);
    r = conv_layer(p, r, block + ".conv", ConvGeometry::same(3), true);
    r = conv_layer(p, r, block + ".restore", ConvGeometry{}, false);
    r = gc_layer(p, r, block + ".gc");
    h = add(g, h, r);
  }
  SfeOutputs<Scalar> out;
  out.features = h;
  out.y_d = conv_layer(p, h, "sfe.head", ConvGeometry{}, false);
  return out;
}

template <typename Scalar>
std::array<Var, 5> ff1(Graph<Scalar>& g, Var features, const NetConfig& cfg) {
  if (cfg.side % 16 != 0) throw ShapeError(fmt::format("ff1: side {} not divisible by 16", cfg.side));
  std::array<Var, 5> pooled;
  for (int k = 0; k < 5; ++k) pooled[k] = avg_pool(g, features, 16 >> k);
  return pooled;
}

template <typename Scalar>
Var ff2(Binder<Scalar>& p, Var bpr_out, Var pooled_full) {
  auto& g = p.graph();
  const Shape a = g.shape(bpr_out);
  const Shape b = g.shape(pooled_full);
  if (a.h != b.h || a.w != b.w)
    throw ShapeError(fmt::format("ff2: spatial mismatch {} vs {}", a.str(), b.str()));
  Var h = concat_channels(g, bpr_out, pooled_full);
  h = gc_layer(p, h, "ff2.gc");
  h = conv_layer(p, h, "ff2.conv1", ConvGeometry::same(3), true);
  h = conv_layer(p, h, "ff2.conv2", ConvGeometry::same(3), true);
  return conv_layer(p, h, "ff2.conv3", ConvGeometry::same(3), false);
}

template <typename Scalar>
NetOutputs<Scalar> asnet_forward(Binder<Scalar>& p, Var input, Var das, const NetConfig& cfg) {
  cfg.validate();
  auto& g = p.graph();
  NetOutputs<Scalar> out;
  if (!cfg.use_bpr) {
    out.y_d = sfe_forward(p, das, cfg).y_d;
    out.y_r = out.y_d;
    return out;
  }
  Var features;
  if (cfg.use_sfe) {
    const SfeOutputs<Scalar> sfe = sfe_forward(p, das, cfg);
    features = sfe.features;
    out.y_d = sfe.y_d;
  } else {
    const Shape ds = g.shape(das);
    features = g.input(Tensor<Scalar>(Shape{ds.n, cfg.sfe_width, cfg.side, cfg.side}), false, "ff.zeros");
  }
  const std::array<Var, 5> pooled = ff1(g, features, cfg);
  const BprOutputs<Scalar> bpr = bpr_forward(p, input, cfg, std::span<const Var>(pooled.data(), 4));
  out.y_r = ff2(p, bpr.decoder[3], pooled[4]);
  return out;
}

template <typename Scalar>
Prediction<Scalar> predict(const NetConfig& cfg, const ParamStore<Scalar>& params, const Tensor<Scalar>& input,
                           const Tensor<Scalar>& das) {
  Graph<Scalar> g(false);
  Binder<Scalar> p(g, params);
  const Var x = g.input(input);
  const Var d = g.input(das);
  const NetOutputs<Scalar> out = asnet_forward(p, x, d, cfg);
  Prediction<Scalar> pred;
  pred.y_r = g.value(out.y_r);
  if (out.y_d.valid()) pred.y_d = g.value(out.y_d);
  pred.flops = g.flops();
  return pred;
}

Shape input_shape(const NetConfig& cfg, int batch) {
  if (cfg.use_ft_stem) return Shape{batch, cfg.in_channels_q, cfg.side, cfg.side};
  return Shape{batch, 1, cfg.in_channels_q * cfg.side, cfg.side};
}

Shape das_shape(const NetConfig& cfg, int batch) { return Shape{batch, 1, cfg.side, cfg.side}; }

Tensor<float> make_network_input(const RawSignalMatrix& s, const NetConfig& cfg, float scale) {
  const int q = q_of(s.m(), cfg.side);
  if (q != cfg.in_channels_q)
    throw ShapeError(fmt::format("signal with {} samples folds to q={} at side {}, network expects q={}", s.m(), q,
                                 cfg.side, cfg.in_channels_q));
  if (s.n() > cfg.side)
    throw ShapeError(fmt::format("signal has {} sensors, more than side {}", s.n(), cfg.side));
  Tensor<float> t(input_shape(cfg));
  if (cfg.use_ft_stem) {
    const FoldedTensor f = fold(s, cfg.side);
    t.array() = f.data.array() * scale;
  } else {
    auto m = t.matrix(static_cast<Eigen::Index>(q) * cfg.side, cfg.side);
    m.topLeftCorner(s.m(), s.n()) = s.data * scale;
  }
  return t;
}

Tensor<float> make_das_input(const ImageGrid& das) {
  const int side = das.side();
  Tensor<float> t(Shape{1, 1, side, side});
  t.matrix(side, side) = das.data;
  return t;
}

#define ASNET_INSTANTIATE(S)                                                                              \
  template ParamStore<S> init_params<S>(const NetConfig&);                                                \
  template ParamStore<S> zeros_like<S>(const ParamStore<S>&);                                             \
  template void check_params<S>(const ParamStore<S>&, const NetConfig&);                                  \
  template class Binder<S>;                                                                               \
  template Var conv_layer<S>(Binder<S>&, Var, const std::string&, const ConvGeometry&, bool);             \
  template Var down_block<S>(Binder<S>&, Var, const std::string&);                                        \
  template Var gc_layer<S>(Binder<S>&, Var, const std::string&);                                          \
  template Var atrous_inception<S>(Binder<S>&, Var, const std::string&);                                  \
  template Var up_stage<S>(Binder<S>&, Var, const std::string&);                                          \
  template BprOutputs<S> bpr_forward<S>(Binder<S>&, Var, const NetConfig&, std::span<const Var>);         \
  template SfeOutputs<S> sfe_forward<S>(Binder<S>&, Var, const NetConfig&);                               \
  template std::array<Var, 5> ff1<S>(Graph<S>&, Var, const NetConfig&);                                   \
  template Var ff2<S>(Binder<S>&, Var, Var);                                                              \
  template NetOutputs<S> asnet_forward<S>(Binder<S>&, Var, Var, const NetConfig&);                        \
  template Prediction<S> predict<S>(const NetConfig&, const ParamStore<S>&, const Tensor<S>&, const Tensor<S>&);

ASNET_INSTANTIATE(float)
ASNET_INSTANTIATE(double)

#undef ASNET_INSTANTIATE

}  // namespace asnet::nn
