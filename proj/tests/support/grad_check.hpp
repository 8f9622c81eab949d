#ifndef ASNET_TESTS_GRAD_CHECK_HPP
#define ASNET_TESTS_GRAD_CHECK_HPP

#include "asnet/nn/asnet.hpp"
#include "asnet/simulate.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <string>
#include <vector>

namespace asnet::testing {

using nn::Binder;
using nn::Graph;
using nn::ParamStore;
using nn::Shape;
using nn::Tensor;
using nn::Var;

inline Tensor<double> random_tensor(const Shape& shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
  Tensor<double> t(shape);
  for (Eigen::Index i = 0; i < t.size(); ++i) t.data()[i] = rng.uniform(lo, hi);
  return t;
}

/// sum(x * r): a linear read-out so any output shape reduces to one number.
inline Var project(Graph<double>& g, Var x, const Tensor<double>& r) {
  const double v = (g.value(x).array() * r.array()).sum();
  return g.emit(
      Tensor<double>(Shape{1, 1, 1, 1}, v), {x},
      [x, r](Graph<double>& g, Var out) {
        if (g.requires_grad(x)) g.grad(x).array() += g.grad(out).data()[0] * r.array();
      },
      "project");
}

using Builder = std::function<Var(Binder<double>&)>;

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::string worst;
  int checked = 0;
  /// Entries left out because a ReLU kink sat within reach of every step tried.
  int skipped = 0;
};

/// Compares reverse-mode gradients of sum(build(store) * r) with central
/// differences on up to `per_tensor` random entries of every tensor in `store`.
/// Where the one-sided differences disagree the step straddles a kink; the
/// entry is retried with a step 100x smaller and skipped if that fails too.
inline GradCheckResult check_gradients(ParamStore<double> store, const Builder& build, int per_tensor = 12,
                                       std::uint64_t seed = 1, double eps = 1e-5) {
  Rng rng(seed, 99);
  Tensor<double> r;
  auto evaluate = [&](ParamStore<double>* grads) {
    Graph<double> g(grads != nullptr);
    Binder<double> p(g, store);
    const Var out = build(p);
    if (r.empty()) r = random_tensor(g.shape(out), rng);
    const Var loss = project(g, out, r);
    const double value = g.value(loss).data()[0];
    if (grads) {
      g.backward(loss);
      p.accumulate(*grads);
    }
    return value;
  };
  ParamStore<double> grads = nn::zeros_like(store);
  const double f0 = evaluate(&grads);

  GradCheckResult result;
  for (auto& [path, t] : store) {
    const Eigen::Index n = t.size();
    std::vector<Eigen::Index> picks;
    if (n <= per_tensor) {
      for (Eigen::Index i = 0; i < n; ++i) picks.push_back(i);
    } else {
      for (int k = 0; k < per_tensor; ++k) picks.push_back(static_cast<Eigen::Index>(rng.uniform_int(0, int(n) - 1)));
    }
    for (Eigen::Index i : picks) {
      const double saved = t.data()[i];
      double numeric = 0.0;
      bool smooth = false;
      for (double h : {eps, eps * 1e-2}) {
        t.data()[i] = saved + h;
        const double up = evaluate(nullptr);
        t.data()[i] = saved - h;
        const double down = evaluate(nullptr);
        t.data()[i] = saved;
        const double fwd = (up - f0) / h, bwd = (f0 - down) / h;
        numeric = (up - down) / (2.0 * h);
        if (std::abs(fwd - bwd) <= 1e-2 * std::max({std::abs(fwd), std::abs(bwd), 1e-6})) {
          smooth = true;
          break;
        }
      }
      if (!smooth) {
        ++result.skipped;
        continue;
      }
      const double analytic = grads.at(path).data()[i];
      const double denom = std::max({std::abs(numeric), std::abs(analytic), 1e-6});
      const double rel = std::abs(numeric - analytic) / denom;
      ++result.checked;
      if (rel > result.max_rel_error) {
        result.max_rel_error = rel;
        result.worst = path + "[" + std::to_string(i) + "]";
      }
    }
  }
  return result;
}

/// Store with every parameter of `specs` drawn uniformly from [-scale, scale].
inline ParamStore<double> random_params(const nn::ParamSpecs& specs, std::uint64_t seed, double scale = 0.5) {
  Rng rng(seed);
  ParamStore<double> store;
  for (const auto& [path, spec] : specs) store.emplace(path, random_tensor(spec.shape, rng, -scale, scale));
  return store;
}

/// Keeps the entries of `specs` whose path starts with one of `prefixes`.
inline nn::ParamSpecs subset(const nn::ParamSpecs& specs, const std::vector<std::string>& prefixes) {
  nn::ParamSpecs out;
  for (const auto& [path, spec] : specs)
    for (const auto& prefix : prefixes)
      if (path.rfind(prefix, 0) == 0) out.emplace(path, spec);
  return out;
}

}  // namespace asnet::testing

#endif  // ASNET_TESTS_GRAD_CHECK_HPP
