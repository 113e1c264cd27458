#pragma once

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <functional>
#include <memory>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "dmsgcn/errors.hpp"

namespace dmsgcn {

using Shape = std::vector<std::size_t>;

inline std::size_t numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>{});
}

inline std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "x" : "") << shape[i];
  os << ']';
  return os.str();
}

namespace detail {

template <typename S>
struct TensorImpl {
  Shape shape;
  std::vector<S> data;
  std::vector<S> grad;
  bool tracked = false;
  bool leaf = true;

  void ensure_grad() {
    if (grad.size() != data.size()) grad.assign(data.size(), S(0));
  }
};

inline bool& grad_mode_flag() {
  thread_local bool enabled = true;
  return enabled;
}

// DMSGCN_CHECK_NAN=1 enables the check; debug builds enable it unless set to 0.
inline bool nan_check_enabled() {
  static const bool enabled = [] {
    const char* v = std::getenv("DMSGCN_CHECK_NAN");
#ifdef NDEBUG
    return v != nullptr && *v != '\0' && std::string(v) != "0";
#else
    return v == nullptr || std::string(v) != "0";
#endif
  }();
  return enabled;
}

}  // namespace detail

inline bool grad_enabled() { return detail::grad_mode_flag(); }

/// Disables tape recording for its lifetime (evaluation, finite differences).
class NoGradGuard {
 public:
  NoGradGuard() : previous_(detail::grad_mode_flag()) { detail::grad_mode_flag() = false; }
  ~NoGradGuard() { detail::grad_mode_flag() = previous_; }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

/// Dense row-major array with an optional gradient buffer. Copies share
/// storage (handle semantics); use clone() for a deep, untracked copy.
template <typename S>
class Tensor {
 public:
  using Scalar = S;
  using Impl = detail::TensorImpl<S>;

  Tensor() = default;

  explicit Tensor(Shape shape, S fill = S(0)) : impl_(std::make_shared<Impl>()) {
    for (std::size_t e : shape)
      if (e == 0) throw DimensionError("tensor extents must be positive, got " + shape_str(shape));
    impl_->data.assign(dmsgcn::numel(shape), fill);
    impl_->shape = std::move(shape);
  }

  Tensor(Shape shape, std::vector<S> values) : Tensor(std::move(shape)) {
    if (values.size() != impl_->data.size())
      throw DimensionError("tensor " + shape_str(impl_->shape) + " needs " +
                           std::to_string(impl_->data.size()) + " values, got " +
                           std::to_string(values.size()));
    impl_->data = std::move(values);
  }

  explicit Tensor(std::shared_ptr<Impl> impl) : impl_(std::move(impl)) {}

  static Tensor scalar(S value) { return Tensor(Shape{1}, value); }

  bool defined() const { return impl_ != nullptr; }
  const Shape& shape() const { return impl_->shape; }
  std::size_t rank() const { return impl_->shape.size(); }
  std::size_t numel() const { return impl_->data.size(); }

  /// Extent along axis; negative axes count from the back.
  std::size_t dim(int axis) const { return impl_->shape[normalize_axis(axis)]; }

  std::size_t normalize_axis(int axis) const {
    const int r = static_cast<int>(rank());
    const int a = axis < 0 ? axis + r : axis;
    if (a < 0 || a >= r)
      throw DimensionError("axis " + std::to_string(axis) + " out of range for " + shape_str(shape()));
    return static_cast<std::size_t>(a);
  }

  std::span<S> data() { return impl_->data; }
  std::span<const S> data() const { return impl_->data; }

  bool has_grad() const { return impl_->grad.size() == impl_->data.size(); }
  std::span<S> grad() { return impl_->grad; }
  std::span<const S> grad() const { return impl_->grad; }

  void zero_grad() { impl_->grad.assign(impl_->data.size(), S(0)); }

  S item() const {
    if (numel() != 1) throw ContractError("item() on non-scalar tensor " + shape_str(shape()));
    return impl_->data[0];
  }

  bool tracked() const { return impl_ && impl_->tracked; }
  bool is_leaf() const { return impl_->leaf; }

  /// Marks a leaf as participating in differentiation.
  Tensor& set_tracked(bool on = true) {
    if (!impl_->leaf) throw ContractError("set_tracked() applies to leaf tensors only");
    impl_->tracked = on;
    return *this;
  }

  Tensor clone() const {
    auto copy = std::make_shared<Impl>();
    copy->shape = impl_->shape;
    copy->data = impl_->data;
    return Tensor(std::move(copy));
  }

  template <typename T>
  Tensor<T> cast() const {
    Tensor<T> out(shape());
    std::transform(impl_->data.begin(), impl_->data.end(), out.data().begin(),
                   [](S v) { return static_cast<T>(v); });
    return out;
  }

  const std::shared_ptr<Impl>& impl() const { return impl_; }

 private:
  std::shared_ptr<Impl> impl_;
};

/// Ordered record of differentiable ops. Nodes are appended as ops run, so
/// construction order is a topological order and backward replays it reversed.
template <typename S>
class Tape {
 public:
  using Impl = detail::TensorImpl<S>;

  struct Node {
    const char* op;
    std::shared_ptr<Impl> output;
    std::function<void()> backward;
  };

  void record(const char* op, std::shared_ptr<Impl> output, std::function<void()> backward) {
    output->leaf = false;
    nodes_.push_back(Node{op, std::move(output), std::move(backward)});
  }

  std::size_t size() const { return nodes_.size(); }
  bool empty() const { return nodes_.empty(); }
  void clear() { nodes_.clear(); }
  const std::vector<Node>& nodes() const { return nodes_; }

  /// Reverse-mode sweep from a scalar loss. Intermediate gradients are reset
  /// first; leaf gradients accumulate, so two calls without zeroing double them.
  void backward(const Tensor<S>& loss) {
    if (!loss.defined() || loss.numel() != 1)
      throw ContractError("backward() needs a scalar loss, got " +
                          (loss.defined() ? shape_str(loss.shape()) : std::string("undefined")));
    if (!loss.tracked()) throw ContractError("backward() on a loss that does not depend on tracked tensors");
    const auto it = std::find_if(nodes_.rbegin(), nodes_.rend(),
                                 [&](const Node& n) { return n.output == loss.impl(); });
    if (it == nodes_.rend()) throw ContractError("backward() on a loss that is not on the active tape");
    const std::size_t end = static_cast<std::size_t>(nodes_.rend() - it);
    for (std::size_t i = 0; i < end; ++i) nodes_[i].output->grad.assign(nodes_[i].output->data.size(), S(0));
    loss.impl()->grad[0] = S(1);
    for (std::size_t i = end; i-- > 0;) nodes_[i].backward();
  }

 private:
  std::vector<Node> nodes_;
};

/// Per-thread tape that ops record onto.
template <typename S>
Tape<S>& active_tape() {
  thread_local Tape<S> tape;
  return tape;
}

template <typename S>
void backward(const Tensor<S>& loss) {
  active_tape<S>().backward(loss);
}

}  // namespace dmsgcn
