#ifndef ASNET_NN_OPS_HPP
#define ASNET_NN_OPS_HPP

#include "asnet/metrics.hpp"
#include "asnet/nn/graph.hpp"

#include <algorithm>
#include <cmath>
#include <vector>

namespace asnet::nn {

struct ConvGeometry {
  int stride_h = 1;
  int stride_w = 1;
  int pad_h = 0;
  int pad_w = 0;
  int dil_h = 1;
  int dil_w = 1;

  /// Stride-1 square kernel padded so the output keeps the input size.
  static ConvGeometry same(int kernel, int dilation = 1) {
    const int pad = dilation * (kernel - 1) / 2;
    return {1, 1, pad, pad, dilation, dilation};
  }
  static ConvGeometry strided(int kernel, int stride) {
    const int pad = (kernel - 1) / 2;
    return {stride, stride, pad, pad, 1, 1};
  }
};

inline int conv_out_extent(int in, int kernel, int stride, int pad, int dilation) {
  return (in + 2 * pad - dilation * (kernel - 1) - 1) / stride + 1;
}

namespace detail {

// Unrolls a (C, H, W) image into a (C*kh*kw) x (Ho*Wo) row-major matrix.
template <typename Scalar>
void im2col(const Scalar* x, int channels, int height, int width, int kh, int kw,
            const ConvGeometry& g, int out_h, int out_w, Scalar* col) {
  const Eigen::Index plane = static_cast<Eigen::Index>(out_h) * out_w;
  for (int c = 0; c < channels; ++c) {
    for (int ki = 0; ki < kh; ++ki) {
      for (int kj = 0; kj < kw; ++kj) {
        Scalar* dst = col + ((static_cast<Eigen::Index>(c) * kh + ki) * kw + kj) * plane;
        for (int oy = 0; oy < out_h; ++oy) {
          Scalar* row = dst + static_cast<Eigen::Index>(oy) * out_w;
          const int iy = oy * g.stride_h - g.pad_h + ki * g.dil_h;
          if (iy < 0 || iy >= height) {
            std::fill(row, row + out_w, Scalar(0));
            continue;
          }
          const Scalar* src = x + (static_cast<Eigen::Index>(c) * height + iy) * width;
          const int offset = kj * g.dil_w - g.pad_w;
          if (g.stride_w == 1) {
            const int lo = std::clamp(-offset, 0, out_w);
            const int hi = std::clamp(width - offset, lo, out_w);
            std::fill(row, row + lo, Scalar(0));
            std::copy(src + lo + offset, src + hi + offset, row + lo);
            std::fill(row + hi, row + out_w, Scalar(0));
          } else {
            for (int ox = 0; ox < out_w; ++ox) {
              const int ix = ox * g.stride_w + offset;
              row[ox] = (ix >= 0 && ix < width) ? src[ix] : Scalar(0);
            }
          }
        }
      }
    }
  }
}

// Adjoint of im2col: scatters (accumulates) columns back into the image.
template <typename Scalar>
void col2im(const Scalar* col, int channels, int height, int width, int kh, int kw,
            const ConvGeometry& g, int out_h, int out_w, Scalar* x) {
  const Eigen::Index plane = static_cast<Eigen::Index>(out_h) * out_w;
  for (int c = 0; c < channels; ++c) {
    for (int ki = 0; ki < kh; ++ki) {
      for (int kj = 0; kj < kw; ++kj) {
        const Scalar* src = col + ((static_cast<Eigen::Index>(c) * kh + ki) * kw + kj) * plane;
        for (int oy = 0; oy < out_h; ++oy) {
          const int iy = oy * g.stride_h - g.pad_h + ki * g.dil_h;
          if (iy < 0 || iy >= height) continue;
          const Scalar* row = src + static_cast<Eigen::Index>(oy) * out_w;
          Scalar* dst = x + (static_cast<Eigen::Index>(c) * height + iy) * width;
          const int offset = kj * g.dil_w - g.pad_w;
          for (int ox = 0; ox < out_w; ++ox) {
            const int ix = ox * g.stride_w + offset;
            if (ix >= 0 && ix < width) dst[ix] += row[ox];
          }
        }
      }
    }
  }
}

inline std::string layer_label(const std::string& weight_name) {
  const std::string suffix = ".weight";
  if (weight_name.size() > suffix.size() &&
      weight_name.compare(weight_name.size() - suffix.size(), suffix.size(), suffix) == 0)
    return weight_name.substr(0, weight_name.size() - suffix.size());
  return weight_name;
}

template <typename Scalar>
using ColVector = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

template <typename Scalar>
Eigen::Map<const ColVector<Scalar>> as_vector(const Tensor<Scalar>& t) {
  return Eigen::Map<const ColVector<Scalar>>(t.data(), t.size());
}

template <typename Scalar>
Eigen::Map<ColVector<Scalar>> as_vector(Tensor<Scalar>& t) {
  return Eigen::Map<ColVector<Scalar>>(t.data(), t.size());
}

}  // namespace detail

/// 2-D convolution. Weight (C_out, C_in, kh, kw); bias (C_out, 1, 1, 1) or invalid.
template <typename Scalar>
Var conv2d(Graph<Scalar>& g, Var x, Var w, Var b, const ConvGeometry& geo) {
  using RowMatrix = typename Tensor<Scalar>::RowMatrix;
  const auto& X = g.value(x);
  const auto& W = g.value(w);
  const Shape xs = X.shape();
  const Shape ws = W.shape();
  if (ws.c != xs.c)
    throw ShapeError(fmt::format("conv2d {}: input {} has {} channels, weight expects {}", g.label(w),
                                 xs.str(), xs.c, ws.c));
  if (b.valid() && g.value(b).size() != ws.n)
    throw ShapeError(fmt::format("conv2d {}: bias size mismatch", g.label(w)));
  const int out_h = conv_out_extent(xs.h, ws.h, geo.stride_h, geo.pad_h, geo.dil_h);
  const int out_w = conv_out_extent(xs.w, ws.w, geo.stride_w, geo.pad_w, geo.dil_w);
  if (out_h < 1 || out_w < 1)
    throw ShapeError(fmt::format("conv2d {}: input {} too small", g.label(w), xs.str()));

  const Eigen::Index k = static_cast<Eigen::Index>(ws.c) * ws.h * ws.w;
  const bool pointwise = ws.h == 1 && ws.w == 1 && geo.stride_h == 1 && geo.stride_w == 1 &&
                         geo.pad_h == 0 && geo.pad_w == 0;
  const auto wm = W.matrix(ws.n, k);
  Tensor<Scalar> y(Shape{xs.n, ws.n, out_h, out_w});
  RowMatrix col;
  if (!pointwise) col.resize(k, static_cast<Eigen::Index>(out_h) * out_w);
  for (int n = 0; n < xs.n; ++n) {
    auto yn = y.item(n);
    if (pointwise) {
      yn.noalias() = wm * X.item(n);
    } else {
      detail::im2col(X.data() + n * static_cast<Eigen::Index>(xs.c) * xs.plane(), xs.c, xs.h, xs.w,
                     ws.h, ws.w, geo, out_h, out_w, col.data());
      yn.noalias() = wm * col;
    }
    if (b.valid()) yn.colwise() += detail::as_vector(g.value(b));
  }
  const std::string label = detail::layer_label(g.label(w));
  const double out_plane = static_cast<double>(out_h) * out_w;
  g.record_flops(label, "conv",
                 xs.n * (2.0 * k * ws.n * out_plane + (b.valid() ? out_plane * ws.n : 0.0)));

  return g.emit(
      std::move(y), {x, w, b},
      [x, w, b, geo, xs, ws, out_h, out_w, k, pointwise](Graph<Scalar>& g, Var out) {
        const auto& X = g.value(x);
        const auto wm = g.value(w).matrix(ws.n, k);
        const auto& dy = g.grad(out);
        RowMatrix col;
        if (!pointwise) col.resize(k, static_cast<Eigen::Index>(out_h) * out_w);
        for (int n = 0; n < xs.n; ++n) {
          const auto dyn = dy.item(n);
          const Scalar* xn = X.data() + n * static_cast<Eigen::Index>(xs.c) * xs.plane();
          if (g.requires_grad(w)) {
            auto dw = g.grad(w).matrix(ws.n, k);
            if (pointwise) {
              dw.noalias() += dyn * X.item(n).transpose();
            } else {
              detail::im2col(xn, xs.c, xs.h, xs.w, ws.h, ws.w, geo, out_h, out_w, col.data());
              dw.noalias() += dyn * col.transpose();
            }
          }
          if (b.valid() && g.requires_grad(b)) detail::as_vector(g.grad(b)) += dyn.rowwise().sum();
          if (g.requires_grad(x)) {
            auto& dx = g.grad(x);
            if (pointwise) {
              dx.item(n).noalias() += wm.transpose() * dyn;
            } else {
              col.noalias() = wm.transpose() * dyn;
              detail::col2im(col.data(), xs.c, xs.h, xs.w, ws.h, ws.w, geo, out_h, out_w,
                             dx.data() + n * static_cast<Eigen::Index>(xs.c) * xs.plane());
            }
          }
        }
      },
      label);
}

/// Transposed 2-D convolution (adjoint of conv2d with the same geometry).
/// Weight (C_in, C_out, kh, kw); output extent (in-1)*stride - 2*pad + dil*(k-1) + 1 + output_pad.
template <typename Scalar>
Var conv_transpose2d(Graph<Scalar>& g, Var x, Var w, Var b, const ConvGeometry& geo,
                     int output_pad = 0) {
  using RowMatrix = typename Tensor<Scalar>::RowMatrix;
  const auto& X = g.value(x);
  const auto& W = g.value(w);
  const Shape xs = X.shape();
  const Shape ws = W.shape();
  if (ws.n != xs.c)
    throw ShapeError(fmt::format("conv_transpose2d {}: input {} has {} channels, weight expects {}",
                                 g.label(w), xs.str(), xs.c, ws.n));
  const int c_out = ws.c;
  const int out_h = (xs.h - 1) * geo.stride_h - 2 * geo.pad_h + geo.dil_h * (ws.h - 1) + 1 + output_pad;
  const int out_w = (xs.w - 1) * geo.stride_w - 2 * geo.pad_w + geo.dil_w * (ws.w - 1) + 1 + output_pad;
  const Eigen::Index k = static_cast<Eigen::Index>(c_out) * ws.h * ws.w;
  const auto wm = W.matrix(ws.n, k);
  Tensor<Scalar> y(Shape{xs.n, c_out, out_h, out_w});
  RowMatrix col(k, xs.plane());
  for (int n = 0; n < xs.n; ++n) {
    col.noalias() = wm.transpose() * X.item(n);
    detail::col2im(col.data(), c_out, out_h, out_w, ws.h, ws.w, geo, xs.h, xs.w,
                   y.data() + n * static_cast<Eigen::Index>(c_out) * out_h * out_w);
    if (b.valid()) y.item(n).colwise() += detail::as_vector(g.value(b));
  }
  const std::string label = detail::layer_label(g.label(w));
  const double out_plane = static_cast<double>(out_h) * out_w;
  g.record_flops(label, "conv_transpose",
                 xs.n * (2.0 * xs.c * k * xs.plane() + (b.valid() ? out_plane * c_out : 0.0)));

  return g.emit(
      std::move(y), {x, w, b},
      [x, w, b, geo, xs, ws, c_out, out_h, out_w, k](Graph<Scalar>& g, Var out) {
        const auto& X = g.value(x);
        const auto wm = g.value(w).matrix(ws.n, k);
        const auto& dy = g.grad(out);
        RowMatrix col(k, xs.plane());
        for (int n = 0; n < xs.n; ++n) {
          detail::im2col(dy.data() + n * static_cast<Eigen::Index>(c_out) * out_h * out_w, c_out,
                         out_h, out_w, ws.h, ws.w, geo, xs.h, xs.w, col.data());
          if (g.requires_grad(w)) g.grad(w).matrix(ws.n, k).noalias() += X.item(n) * col.transpose();
          if (b.valid() && g.requires_grad(b))
            detail::as_vector(g.grad(b)) += dy.item(n).rowwise().sum();
          if (g.requires_grad(x)) g.grad(x).item(n).noalias() += wm * col;
        }
      },
      label);
}

template <typename Scalar>
Var relu(Graph<Scalar>& g, Var x) {
  Tensor<Scalar> y = g.value(x);
  y.array() = y.array().max(Scalar(0));
  g.record_flops("relu", "elementwise", static_cast<double>(y.size()));
  return g.emit(
      std::move(y), {x},
      [x](Graph<Scalar>& g, Var out) {
        if (!g.requires_grad(x)) return;
        g.grad(x).array() += (g.value(out).array() > Scalar(0)).select(g.grad(out).array(), Scalar(0));
      },
      "relu");
}

template <typename Scalar>
Var add(Graph<Scalar>& g, Var a, Var b) {
  if (!(g.shape(a) == g.shape(b)))
    throw ShapeError(fmt::format("add: {} vs {}", g.shape(a).str(), g.shape(b).str()));
  Tensor<Scalar> y = g.value(a);
  y.array() += g.value(b).array();
  g.record_flops("add", "elementwise", static_cast<double>(y.size()));
  return g.emit(
      std::move(y), {a, b},
      [a, b](Graph<Scalar>& g, Var out) {
        if (g.requires_grad(a)) g.grad(a).array() += g.grad(out).array();
        if (g.requires_grad(b)) g.grad(b).array() += g.grad(out).array();
      },
      "add");
}

/// Channel-wise concatenation of two maps with matching batch and spatial extent.
template <typename Scalar>
Var concat_channels(Graph<Scalar>& g, Var a, Var b) {
  const Shape sa = g.shape(a);
  const Shape sb = g.shape(b);
  if (sa.n != sb.n || sa.h != sb.h || sa.w != sb.w)
    throw ShapeError(fmt::format("concat: {} vs {}", sa.str(), sb.str()));
  Tensor<Scalar> y(Shape{sa.n, sa.c + sb.c, sa.h, sa.w});
  for (int n = 0; n < sa.n; ++n) {
    y.item(n).topRows(sa.c) = g.value(a).item(n);
    y.item(n).bottomRows(sb.c) = g.value(b).item(n);
  }
  return g.emit(
      std::move(y), {a, b},
      [a, b, sa, sb](Graph<Scalar>& g, Var out) {
        const auto& dy = g.grad(out);
        for (int n = 0; n < sa.n; ++n) {
          if (g.requires_grad(a)) g.grad(a).item(n) += dy.item(n).topRows(sa.c);
          if (g.requires_grad(b)) g.grad(b).item(n) += dy.item(n).bottomRows(sb.c);
        }
      },
      "concat");
}

/// Non-overlapping average pooling with a square window.
template <typename Scalar>
Var avg_pool(Graph<Scalar>& g, Var x, int window) {
  const Shape xs = g.shape(x);
  if (window < 1 || xs.h % window != 0 || xs.w % window != 0)
    throw ShapeError(fmt::format("avg_pool: window {} does not tile {}", window, xs.str()));
  if (window == 1) return x;
  const Shape ys{xs.n, xs.c, xs.h / window, xs.w / window};
  const auto& X = g.value(x);
  Tensor<Scalar> y(ys);
  const Scalar inv = Scalar(1) / Scalar(window * window);
  for (int n = 0; n < xs.n; ++n)
    for (int c = 0; c < xs.c; ++c)
      for (int i = 0; i < xs.h; ++i)
        for (int j = 0; j < xs.w; ++j) y(n, c, i / window, j / window) += X(n, c, i, j) * inv;
  g.record_flops("avg_pool", "pool", static_cast<double>(xs.size()));
  return g.emit(
      std::move(y), {x},
      [x, xs, window, inv](Graph<Scalar>& g, Var out) {
        if (!g.requires_grad(x)) return;
        const auto& dy = g.grad(out);
        auto& dx = g.grad(x);
        for (int n = 0; n < xs.n; ++n)
          for (int c = 0; c < xs.c; ++c)
            for (int i = 0; i < xs.h; ++i)
              for (int j = 0; j < xs.w; ++j) dx(n, c, i, j) += dy(n, c, i / window, j / window) * inv;
      },
      "avg_pool");
}

/// Global-context attention: per batch item, logits l_j = w_k . x_j + b_k over
/// all positions, alpha = softmax(l), context = sum_j alpha_j x_j, and
/// z_i = x_i + W_v context. The attention weights are kept in aux() with shape
/// (N, 1, H, W).
template <typename Scalar>
Var gc_block(Graph<Scalar>& g, Var x, Var wk, Var bk, Var wv) {
  using Row = Eigen::Matrix<Scalar, 1, Eigen::Dynamic>;
  using Col = detail::ColVector<Scalar>;
  const auto& X = g.value(x);
  const Shape xs = X.shape();
  const int c = xs.c;
  if (g.value(wk).size() != c)
    throw ShapeError(fmt::format("gc_block {}: key weight has {} entries for {} channels", g.label(wk),
                                 g.value(wk).size(), c));
  if (g.value(wv).size() != static_cast<Eigen::Index>(c) * c)
    throw ShapeError(fmt::format("gc_block {}: value weight is not {}x{}", g.label(wv), c, c));
  const auto key = g.value(wk).matrix(1, c);
  const auto value_w = g.value(wv).matrix(c, c);
  const Scalar key_bias = bk.valid() ? g.value(bk).data()[0] : Scalar(0);

  Tensor<Scalar> y = X;
  Tensor<Scalar> attention(Shape{xs.n, 1, xs.h, xs.w});
  for (int n = 0; n < xs.n; ++n) {
    const auto xn = X.item(n);
    Row logits = key * xn;
    logits.array() += key_bias;
    const Scalar peak = logits.maxCoeff();
    Row alpha = (logits.array() - peak).exp().matrix();
    alpha /= alpha.sum();
    attention.item(n) = alpha;
    const Col context = xn * alpha.transpose();
    const Col v = value_w * context;
    y.item(n).colwise() += v;
  }
  const double p = static_cast<double>(xs.plane());
  const std::string& wv_name = g.label(wv);
  g.record_flops(wv_name.substr(0, wv_name.rfind('.')), "gc",
                 xs.n * (2.0 * c * p + p + 3.0 * p + 2.0 * c * p + 2.0 * c * c + c * p));

  const Var out = g.emit(
      std::move(y), {x, wk, bk, wv},
      [x, wk, bk, wv, xs, c](Graph<Scalar>& g, Var out) {
        const auto& X = g.value(x);
        const auto key = g.value(wk).matrix(1, c);
        const auto value_w = g.value(wv).matrix(c, c);
        const auto& dy = g.grad(out);
        const auto& attention = g.aux(out);
        for (int n = 0; n < xs.n; ++n) {
          const auto xn = X.item(n);
          const auto dyn = dy.item(n);
          const Row alpha = attention.item(n);
          const Col context = xn * alpha.transpose();
          const Col dv = dyn.rowwise().sum();
          if (g.requires_grad(wv)) g.grad(wv).matrix(c, c).noalias() += dv * context.transpose();
          const Col dcontext = value_w.transpose() * dv;
          const Row dalpha = dcontext.transpose() * xn;
          const Scalar dot = dalpha.dot(alpha);
          const Row dlogits = (alpha.array() * (dalpha.array() - dot)).matrix();
          if (g.requires_grad(wk)) g.grad(wk).matrix(1, c).noalias() += dlogits * xn.transpose();
          if (bk.valid() && g.requires_grad(bk)) g.grad(bk).data()[0] += dlogits.sum();
          if (g.requires_grad(x)) {
            auto dxn = g.grad(x).item(n);
            dxn += dyn;
            dxn.noalias() += dcontext * alpha;
            dxn.noalias() += key.transpose() * dlogits;
          }
        }
      },
      "gc");
  g.aux(out) = std::move(attention);
  return out;
}

/// Mean smooth-L1 of (pred - target) as a single-element node.
template <typename Scalar>
Var smooth_l1_loss(Graph<Scalar>& g, Var pred, Var target) {
  if (!(g.shape(pred) == g.shape(target)))
    throw ShapeError(fmt::format("smooth_l1: {} vs {}", g.shape(pred).str(), g.shape(target).str()));
  const auto diff = (g.value(pred).array() - g.value(target).array()).eval();
  Scalar acc(0);
  for (Eigen::Index i = 0; i < diff.size(); ++i) acc += smooth_l1_point(diff[i]);
  Tensor<Scalar> y(Shape{1, 1, 1, 1}, acc / Scalar(diff.size()));
  g.record_flops("smooth_l1", "loss", 3.0 * static_cast<double>(diff.size()));
  return g.emit(
      std::move(y), {pred, target},
      [pred, target](Graph<Scalar>& g, Var out) {
        const Scalar upstream = g.grad(out).data()[0];
        const auto diff = (g.value(pred).array() - g.value(target).array()).eval();
        const Scalar scale = upstream / Scalar(diff.size());
        const auto slope = diff.unaryExpr([](Scalar d) { return smooth_l1_slope(d); }).eval();
        if (g.requires_grad(pred)) g.grad(pred).array() += scale * slope;
        if (g.requires_grad(target)) g.grad(target).array() -= scale * slope;
      },
      "smooth_l1");
}

/// sum_i weights[i] * terms[i] over single-element nodes.
template <typename Scalar>
Var weighted_sum(Graph<Scalar>& g, const std::vector<Var>& terms, const std::vector<Scalar>& weights) {
  if (terms.size() != weights.size()) throw ShapeError("weighted_sum: size mismatch");
  Scalar acc(0);
  bool any_grad = false;
  for (std::size_t i = 0; i < terms.size(); ++i) {
    if (g.value(terms[i]).size() != 1) throw ShapeError("weighted_sum: terms must be scalars");
    acc += weights[i] * g.value(terms[i]).data()[0];
    any_grad = any_grad || g.requires_grad(terms[i]);
  }
  // emit() derives requires_grad from an initializer list; route through the first grad-carrying term.
  Var carrier;
  for (const Var& t : terms)
    if (g.requires_grad(t)) carrier = t;
  return g.emit(
      Tensor<Scalar>(Shape{1, 1, 1, 1}, acc), {any_grad ? carrier : Var{}},
      [terms, weights](Graph<Scalar>& g, Var out) {
        const Scalar upstream = g.grad(out).data()[0];
        for (std::size_t i = 0; i < terms.size(); ++i)
          if (g.requires_grad(terms[i])) g.grad(terms[i]).data()[0] += weights[i] * upstream;
      },
      "weighted_sum");
}

}  // namespace asnet::nn

#endif  // ASNET_NN_OPS_HPP
