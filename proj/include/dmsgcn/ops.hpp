#pragma once

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <initializer_list>
#include <string>
#include <vector>

#include "dmsgcn/errors.hpp"
#include "dmsgcn/rng.hpp"
#include "dmsgcn/tensor.hpp"

// Differentiable ops. Each op computes its output eagerly and, when any input
// is tracked and grad mode is on, records a backward closure on the active tape.

namespace dmsgcn {

namespace detail {

inline thread_local double* kink_margin = nullptr;

template <typename S>
void note_kink_distance(S distance) {
  if (kink_margin) *kink_margin = std::min(*kink_margin, static_cast<double>(std::abs(distance)));
}

template <typename S>
using RowMat = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename S>
using MatMap = Eigen::Map<RowMat<S>>;
template <typename S>
using ConstMatMap = Eigen::Map<const RowMat<S>>;

template <typename S>
Tensor<S> make_result(Shape shape, std::initializer_list<const Tensor<S>*> inputs) {
  Tensor<S> out(std::move(shape));
  bool tracked = false;
  if (grad_enabled())
    for (const Tensor<S>* t : inputs) tracked = tracked || t->tracked();
  out.impl()->tracked = tracked;
  return out;
}

template <typename S, typename F>
void finish(const char* op, Tensor<S>& out, F&& backward) {
  if (nan_check_enabled()) {
    for (S v : out.data())
      if (!std::isfinite(v)) throw NumericalError(std::string("non-finite value produced by ") + op);
  }
  if (out.tracked()) active_tape<S>().record(op, out.impl(), std::function<void()>(std::forward<F>(backward)));
}

template <typename S>
void require_same_shape(const char* op, const Tensor<S>& a, const Tensor<S>& b) {
  if (a.shape() != b.shape())
    throw DimensionError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
}

}  // namespace detail

/// While alive, records the smallest distance to a kink (PReLU input at 0,
/// l1 residual at 0) seen by forward passes on this thread. Nests.
class KinkMonitor {
 public:
  KinkMonitor() : previous_(detail::kink_margin) { detail::kink_margin = &margin_; }
  ~KinkMonitor() { detail::kink_margin = previous_; }
  KinkMonitor(const KinkMonitor&) = delete;
  KinkMonitor& operator=(const KinkMonitor&) = delete;
  double margin() const { return margin_; }

 private:
  double margin_ = INFINITY;
  double* previous_;
};

namespace detail {

// Product of extents before / after an axis.
inline std::pair<std::size_t, std::size_t> split_extent(const Shape& shape, std::size_t axis) {
  std::size_t pre = 1, post = 1;
  for (std::size_t i = 0; i < axis; ++i) pre *= shape[i];
  for (std::size_t i = axis + 1; i < shape.size(); ++i) post *= shape[i];
  return {pre, post};
}

template <typename S>
void accumulate(const std::shared_ptr<TensorImpl<S>>& dst, const std::vector<S>& g, S factor = S(1)) {
  if (!dst->tracked) return;
  dst->ensure_grad();
  for (std::size_t i = 0; i < g.size(); ++i) dst->grad[i] += factor * g[i];
}

}  // namespace detail

template <typename S>
Tensor<S> add(const Tensor<S>& a, const Tensor<S>& b) {
  detail::require_same_shape("add", a, b);
  auto out = detail::make_result<S>(a.shape(), {&a, &b});
  auto o = out.data();
  auto x = a.data();
  auto y = b.data();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] = x[i] + y[i];
  detail::finish("add", out, [ai = a.impl(), bi = b.impl(), oi = out.impl()] {
    detail::accumulate(ai, oi->grad);
    detail::accumulate(bi, oi->grad);
  });
  return out;
}

template <typename S>
Tensor<S> sub(const Tensor<S>& a, const Tensor<S>& b) {
  detail::require_same_shape("sub", a, b);
  auto out = detail::make_result<S>(a.shape(), {&a, &b});
  auto o = out.data();
  auto x = a.data();
  auto y = b.data();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] = x[i] - y[i];
  detail::finish("sub", out, [ai = a.impl(), bi = b.impl(), oi = out.impl()] {
    detail::accumulate(ai, oi->grad);
    detail::accumulate(bi, oi->grad, S(-1));
  });
  return out;
}

template <typename S>
Tensor<S> scale(const Tensor<S>& x, S factor) {
  auto out = detail::make_result<S>(x.shape(), {&x});
  auto o = out.data();
  auto v = x.data();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] = factor * v[i];
  detail::finish("scale", out, [xi = x.impl(), oi = out.impl(), factor] { detail::accumulate(xi, oi->grad, factor); });
  return out;
}

/// Elementwise product. Where b is a constant binary mask, the gradient into a
/// is exactly +0.0 at masked entries.
template <typename S>
Tensor<S> hadamard(const Tensor<S>& a, const Tensor<S>& b) {
  detail::require_same_shape("hadamard", a, b);
  auto out = detail::make_result<S>(a.shape(), {&a, &b});
  auto o = out.data();
  auto x = a.data();
  auto y = b.data();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] = x[i] * y[i];
  detail::finish("hadamard", out, [ai = a.impl(), bi = b.impl(), oi = out.impl()] {
    const auto& g = oi->grad;
    if (ai->tracked) {
      ai->ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) ai->grad[i] += g[i] * bi->data[i];
    }
    if (bi->tracked) {
      bi->ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) bi->grad[i] += g[i] * ai->data[i];
    }
  });
  return out;
}

/// a[..., k] x b[k, n] -> [..., n]; leading axes of a are flattened into rows.
template <typename S>
Tensor<S> matmul(const Tensor<S>& a, const Tensor<S>& b) {
  if (a.rank() < 2 || b.rank() != 2 || a.dim(-1) != b.dim(0))
    throw DimensionError("matmul: cannot multiply " + shape_str(a.shape()) + " by " + shape_str(b.shape()));
  const auto k = static_cast<Eigen::Index>(b.dim(0));
  const auto n = static_cast<Eigen::Index>(b.dim(1));
  const auto m = static_cast<Eigen::Index>(a.numel() / b.dim(0));
  Shape shape = a.shape();
  shape.back() = b.dim(1);
  auto out = detail::make_result<S>(std::move(shape), {&a, &b});
  detail::MatMap<S>(out.data().data(), m, n).noalias() =
      detail::ConstMatMap<S>(a.data().data(), m, k) * detail::ConstMatMap<S>(b.data().data(), k, n);
  detail::finish("matmul", out, [ai = a.impl(), bi = b.impl(), oi = out.impl(), m, k, n] {
    detail::ConstMatMap<S> g(oi->grad.data(), m, n);
    if (ai->tracked) {
      ai->ensure_grad();
      detail::MatMap<S>(ai->grad.data(), m, k).noalias() +=
          g * detail::ConstMatMap<S>(bi->data.data(), k, n).transpose();
    }
    if (bi->tracked) {
      bi->ensure_grad();
      detail::MatMap<S>(bi->grad.data(), k, n).noalias() +=
          detail::ConstMatMap<S>(ai->data.data(), m, k).transpose() * g;
    }
  });
  return out;
}

/// Applies m[out, in] along one axis of x: y[.., o, ..] = sum_i m[o, i] x[.., i, ..].
/// Covers graph propagation over joints or frames, pooling, and time-channel mixing.
template <typename S>
Tensor<S> mix_axis(const Tensor<S>& m, const Tensor<S>& x, int axis) {
  const std::size_t ax = x.normalize_axis(axis);
  if (m.rank() != 2 || m.dim(1) != x.shape()[ax])
    throw DimensionError("mix_axis: matrix " + shape_str(m.shape()) + " cannot act on axis " +
                         std::to_string(axis) + " of " + shape_str(x.shape()));
  const auto [pre, post] = detail::split_extent(x.shape(), ax);
  const auto rows = static_cast<Eigen::Index>(m.dim(0));
  const auto cols = static_cast<Eigen::Index>(m.dim(1));
  const auto width = static_cast<Eigen::Index>(post);
  Shape shape = x.shape();
  shape[ax] = m.dim(0);
  auto out = detail::make_result<S>(std::move(shape), {&m, &x});
  detail::ConstMatMap<S> mm(m.data().data(), rows, cols);
  for (std::size_t p = 0; p < pre; ++p) {
    detail::MatMap<S>(out.data().data() + p * rows * width, rows, width).noalias() =
        mm * detail::ConstMatMap<S>(x.data().data() + p * cols * width, cols, width);
  }
  detail::finish("mix_axis", out, [mi = m.impl(), xi = x.impl(), oi = out.impl(), pre, rows, cols, width] {
    detail::ConstMatMap<S> mm(mi->data.data(), rows, cols);
    if (xi->tracked) xi->ensure_grad();
    if (mi->tracked) mi->ensure_grad();
    for (std::size_t p = 0; p < pre; ++p) {
      detail::ConstMatMap<S> g(oi->grad.data() + p * rows * width, rows, width);
      if (xi->tracked)
        detail::MatMap<S>(xi->grad.data() + p * cols * width, cols, width).noalias() += mm.transpose() * g;
      if (mi->tracked)
        detail::MatMap<S>(mi->grad.data(), rows, cols).noalias() +=
            g * detail::ConstMatMap<S>(xi->data.data() + p * cols * width, cols, width).transpose();
    }
  });
  return out;
}

/// Adds a vector along one axis (default: the last).
template <typename S>
Tensor<S> add_bias(const Tensor<S>& x, const Tensor<S>& bias, int axis = -1) {
  const std::size_t ax = x.normalize_axis(axis);
  if (bias.numel() != x.shape()[ax])
    throw DimensionError("add_bias: bias " + shape_str(bias.shape()) + " does not match axis " +
                         std::to_string(axis) + " of " + shape_str(x.shape()));
  const auto [pre, post] = detail::split_extent(x.shape(), ax);
  const std::size_t n = x.shape()[ax];
  auto out = detail::make_result<S>(x.shape(), {&x, &bias});
  auto o = out.data();
  auto v = x.data();
  auto b = bias.data();
  for (std::size_t p = 0, i = 0; p < pre; ++p)
    for (std::size_t j = 0; j < n; ++j)
      for (std::size_t q = 0; q < post; ++q, ++i) o[i] = v[i] + b[j];
  detail::finish("add_bias", out, [xi = x.impl(), bi = bias.impl(), oi = out.impl(), pre, n, post] {
    detail::accumulate(xi, oi->grad);
    if (bi->tracked) {
      bi->ensure_grad();
      for (std::size_t p = 0, i = 0; p < pre; ++p)
        for (std::size_t j = 0; j < n; ++j)
          for (std::size_t q = 0; q < post; ++q, ++i) bi->grad[j] += oi->grad[i];
    }
  });
  return out;
}

/// y = x for x >= 0, slope * x otherwise. slope is a scalar or one value per
/// channel (last axis).
template <typename S>
Tensor<S> prelu(const Tensor<S>& x, const Tensor<S>& slope) {
  const std::size_t channels = x.dim(-1);
  if (slope.numel() != 1 && slope.numel() != channels)
    throw DimensionError("prelu: slope " + shape_str(slope.shape()) + " does not fit " + shape_str(x.shape()));
  const bool shared = slope.numel() == 1;
  auto out = detail::make_result<S>(x.shape(), {&x, &slope});
  auto o = out.data();
  auto v = x.data();
  auto s = slope.data();
  for (std::size_t i = 0; i < o.size(); ++i) {
    const S a = s[shared ? 0 : i % channels];
    o[i] = v[i] >= S(0) ? v[i] : a * v[i];
  }
  if (detail::kink_margin)
    for (S value : v) detail::note_kink_distance(value);
  detail::finish("prelu", out, [xi = x.impl(), si = slope.impl(), oi = out.impl(), shared, channels] {
    const auto& g = oi->grad;
    if (xi->tracked) xi->ensure_grad();
    if (si->tracked) si->ensure_grad();
    for (std::size_t i = 0; i < g.size(); ++i) {
      const std::size_t c = shared ? 0 : i % channels;
      const S v = xi->data[i];
      if (xi->tracked) xi->grad[i] += v >= S(0) ? g[i] : si->data[c] * g[i];
      if (si->tracked && v < S(0)) si->grad[c] += g[i] * v;
    }
  });
  return out;
}

/// Inverted dropout; identity in evaluation or at rate 0. The mask is a pure
/// function of (seed, element index).
template <typename S>
Tensor<S> dropout(const Tensor<S>& x, double rate, bool training, std::uint64_t seed) {
  if (!(rate >= 0.0 && rate < 1.0)) throw ConfigError("dropout rate must lie in [0, 1), got " + std::to_string(rate));
  if (!training || rate == 0.0) return x;
  const Philox rng(seed);
  const S keep_scale = S(1) / static_cast<S>(1.0 - rate);
  std::vector<S> mask(x.numel());
  std::vector<std::uint32_t> words(mask.size());
  rng.fill_words(0, words.size(), words.data());
  // Same draw as rng.uniform_float(i): keep iff (word >> 8) * 2^-24 >= rate.
  for (std::size_t i = 0; i < mask.size(); ++i)
    mask[i] = static_cast<double>(static_cast<float>(words[i] >> 8) * 0x1p-24f) >= rate ? keep_scale : S(0);
  auto out = detail::make_result<S>(x.shape(), {&x});
  auto o = out.data();
  auto v = x.data();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] = v[i] * mask[i];
  detail::finish("dropout", out, [xi = x.impl(), oi = out.impl(), mask = std::move(mask)] {
    if (!xi->tracked) return;
    xi->ensure_grad();
    for (std::size_t i = 0; i < mask.size(); ++i) xi->grad[i] += oi->grad[i] * mask[i];
  });
  return out;
}

template <typename S>
Tensor<S> sum(const Tensor<S>& x) {
  auto out = detail::make_result<S>(Shape{1}, {&x});
  S total = 0;
  for (S v : x.data()) total += v;
  out.data()[0] = total;
  detail::finish("sum", out, [xi = x.impl(), oi = out.impl()] {
    if (!xi->tracked) return;
    xi->ensure_grad();
    for (S& g : xi->grad) g += oi->grad[0];
  });
  return out;
}

template <typename S>
Tensor<S> mean(const Tensor<S>& x) {
  return scale(sum(x), S(1) / static_cast<S>(x.numel()));
}

/// Mean over points of the coordinate-wise absolute error, where a point is
/// one slice along the last axis: for [K, V, 3] this is
/// (1 / (V K)) sum_t sum_v |pred - target|_1. Subgradient 0 at ties.
template <typename S>
Tensor<S> l1_loss(const Tensor<S>& pred, const Tensor<S>& target) {
  detail::require_same_shape("l1_loss", pred, target);
  const std::size_t points = pred.numel() / pred.dim(-1);
  auto out = detail::make_result<S>(Shape{1}, {&pred, &target});
  S total = 0;
  auto p = pred.data();
  auto t = target.data();
  for (std::size_t i = 0; i < p.size(); ++i) total += std::abs(p[i] - t[i]);
  if (detail::kink_margin)
    for (std::size_t i = 0; i < p.size(); ++i) detail::note_kink_distance(p[i] - t[i]);
  out.data()[0] = total / static_cast<S>(points);
  detail::finish("l1_loss", out, [pi = pred.impl(), ti = target.impl(), oi = out.impl(), points] {
    const S g = oi->grad[0] / static_cast<S>(points);
    if (pi->tracked) pi->ensure_grad();
    if (ti->tracked) ti->ensure_grad();
    for (std::size_t i = 0; i < pi->data.size(); ++i) {
      const S d = pi->data[i] - ti->data[i];
      const S sgn = d > S(0) ? S(1) : (d < S(0) ? S(-1) : S(0));
      if (pi->tracked) pi->grad[i] += g * sgn;
      if (ti->tracked) ti->grad[i] -= g * sgn;
    }
  });
  return out;
}

/// Axis permutation: output axis i is input axis perm[i].
template <typename S>
Tensor<S> permute(const Tensor<S>& x, const std::vector<std::size_t>& perm) {
  const std::size_t r = x.rank();
  std::vector<bool> seen(r, false);
  if (perm.size() != r) throw DimensionError("permute: permutation rank does not match " + shape_str(x.shape()));
  for (std::size_t p : perm) {
    if (p >= r || seen[p]) throw DimensionError("permute: invalid permutation");
    seen[p] = true;
  }
  std::vector<std::size_t> in_strides(r, 1);
  for (std::size_t i = r - 1; i-- > 0;) in_strides[i] = in_strides[i + 1] * x.shape()[i + 1];
  Shape shape(r);
  std::vector<std::size_t> strides(r);  // input stride of each output axis
  for (std::size_t i = 0; i < r; ++i) {
    shape[i] = x.shape()[perm[i]];
    strides[i] = in_strides[perm[i]];
  }
  // gather index of every output element
  std::vector<std::size_t> source(x.numel());
  std::vector<std::size_t> idx(r, 0);
  for (std::size_t o = 0; o < source.size(); ++o) {
    std::size_t s = 0;
    for (std::size_t i = 0; i < r; ++i) s += idx[i] * strides[i];
    source[o] = s;
    for (std::size_t i = r; i-- > 0;) {
      if (++idx[i] < shape[i]) break;
      idx[i] = 0;
    }
  }
  auto out = detail::make_result<S>(std::move(shape), {&x});
  auto o = out.data();
  auto v = x.data();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] = v[source[i]];
  detail::finish("permute", out, [xi = x.impl(), oi = out.impl(), source = std::move(source)] {
    if (!xi->tracked) return;
    xi->ensure_grad();
    for (std::size_t i = 0; i < source.size(); ++i) xi->grad[source[i]] += oi->grad[i];
  });
  return out;
}

/// Copy with a new shape of equal element count.
template <typename S>
Tensor<S> reshape(const Tensor<S>& x, Shape shape) {
  if (numel(shape) != x.numel())
    throw DimensionError("reshape: cannot view " + shape_str(x.shape()) + " as " + shape_str(shape));
  auto out = detail::make_result<S>(std::move(shape), {&x});
  std::copy(x.data().begin(), x.data().end(), out.data().begin());
  detail::finish("reshape", out, [xi = x.impl(), oi = out.impl()] { detail::accumulate(xi, oi->grad); });
  return out;
}

/// Slice at one index of an axis, dropping that axis.
template <typename S>
Tensor<S> select(const Tensor<S>& x, int axis, std::size_t index) {
  const std::size_t ax = x.normalize_axis(axis);
  if (x.rank() < 2) throw DimensionError("select: needs rank >= 2, got " + shape_str(x.shape()));
  const std::size_t n = x.shape()[ax];
  if (index >= n) throw DimensionError("select: index " + std::to_string(index) + " out of range for " + shape_str(x.shape()));
  const auto [pre, post] = detail::split_extent(x.shape(), ax);
  Shape shape = x.shape();
  shape.erase(shape.begin() + static_cast<std::ptrdiff_t>(ax));
  auto out = detail::make_result<S>(std::move(shape), {&x});
  auto o = out.data();
  auto v = x.data();
  for (std::size_t p = 0; p < pre; ++p)
    std::copy_n(v.begin() + static_cast<std::ptrdiff_t>((p * n + index) * post), post,
                o.begin() + static_cast<std::ptrdiff_t>(p * post));
  detail::finish("select", out, [xi = x.impl(), oi = out.impl(), pre, post, n, index] {
    if (!xi->tracked) return;
    xi->ensure_grad();
    for (std::size_t p = 0; p < pre; ++p)
      for (std::size_t q = 0; q < post; ++q) xi->grad[(p * n + index) * post + q] += oi->grad[p * post + q];
  });
  return out;
}

/// Inserts a new axis at position `axis` (0..rank) repeating x `count` times.
template <typename S>
Tensor<S> broadcast(const Tensor<S>& x, std::size_t axis, std::size_t count) {
  if (axis > x.rank()) throw DimensionError("broadcast: axis out of range for " + shape_str(x.shape()));
  std::size_t pre = 1, post = 1;
  for (std::size_t i = 0; i < axis; ++i) pre *= x.shape()[i];
  for (std::size_t i = axis; i < x.rank(); ++i) post *= x.shape()[i];
  Shape shape = x.shape();
  shape.insert(shape.begin() + static_cast<std::ptrdiff_t>(axis), count);
  auto out = detail::make_result<S>(std::move(shape), {&x});
  auto o = out.data();
  auto v = x.data();
  for (std::size_t p = 0; p < pre; ++p)
    for (std::size_t c = 0; c < count; ++c)
      std::copy_n(v.begin() + static_cast<std::ptrdiff_t>(p * post), post,
                  o.begin() + static_cast<std::ptrdiff_t>((p * count + c) * post));
  detail::finish("broadcast", out, [xi = x.impl(), oi = out.impl(), pre, post, count] {
    if (!xi->tracked) return;
    xi->ensure_grad();
    for (std::size_t p = 0; p < pre; ++p)
      for (std::size_t c = 0; c < count; ++c)
        for (std::size_t q = 0; q < post; ++q) xi->grad[p * post + q] += oi->grad[(p * count + c) * post + q];
  });
  return out;
}

/// alpha * coarse + (1 - alpha) * fine with a scalar alpha. alpha == 0 and
/// alpha == 1 return the respective operand values bit-exactly.
template <typename S>
Tensor<S> lerp(const Tensor<S>& fine, const Tensor<S>& coarse, const Tensor<S>& alpha) {
  detail::require_same_shape("lerp", fine, coarse);
  if (alpha.numel() != 1) throw DimensionError("lerp: alpha must be a scalar, got " + shape_str(alpha.shape()));
  const S a = alpha.data()[0];
  auto out = detail::make_result<S>(fine.shape(), {&fine, &coarse, &alpha});
  auto o = out.data();
  auto f = fine.data();
  auto c = coarse.data();
  if (a == S(0)) {
    std::copy(f.begin(), f.end(), o.begin());
  } else if (a == S(1)) {
    std::copy(c.begin(), c.end(), o.begin());
  } else {
    for (std::size_t i = 0; i < o.size(); ++i) o[i] = a * c[i] + (S(1) - a) * f[i];
  }
  detail::finish("lerp", out, [fi = fine.impl(), ci = coarse.impl(), ai = alpha.impl(), oi = out.impl()] {
    const S a = ai->data[0];
    detail::accumulate(fi, oi->grad, S(1) - a);
    detail::accumulate(ci, oi->grad, a);
    if (ai->tracked) {
      ai->ensure_grad();
      S total = 0;
      for (std::size_t i = 0; i < oi->grad.size(); ++i) total += oi->grad[i] * (ci->data[i] - fi->data[i]);
      ai->grad[0] += total;
    }
  });
  return out;
}

template <typename S>
Tensor<S> sigmoid(const Tensor<S>& x) {
  auto out = detail::make_result<S>(x.shape(), {&x});
  auto o = out.data();
  auto v = x.data();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] = S(1) / (S(1) + std::exp(-v[i]));
  detail::finish("sigmoid", out, [xi = x.impl(), oi = out.impl()] {
    if (!xi->tracked) return;
    xi->ensure_grad();
    for (std::size_t i = 0; i < oi->data.size(); ++i) {
      const S y = oi->data[i];
      xi->grad[i] += oi->grad[i] * y * (S(1) - y);
    }
  });
  return out;
}

/// Elementwise op from a value function and its derivative.
template <typename S, typename F, typename DF>
Tensor<S> map_unary(const Tensor<S>& x, F f, DF df, const char* name = "map_unary") {
  auto out = detail::make_result<S>(x.shape(), {&x});
  auto o = out.data();
  auto v = x.data();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] = f(v[i]);
  detail::finish(name, out, [xi = x.impl(), oi = out.impl(), df] {
    if (!xi->tracked) return;
    xi->ensure_grad();
    for (std::size_t i = 0; i < oi->grad.size(); ++i) xi->grad[i] += oi->grad[i] * df(xi->data[i]);
  });
  return out;
}

}  // namespace dmsgcn
