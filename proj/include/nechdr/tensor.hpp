#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace nechdr {

/// Raised when tensor extents do not satisfy an operation's contract.
class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Rank-4 extents in (batch, channel, height, width) order.
struct Shape {
  int n = 0;
  int c = 0;
  int h = 0;
  int w = 0;

  std::size_t numel() const {
    return static_cast<std::size_t>(n) * c * h * w;
  }
  std::size_t plane() const { return static_cast<std::size_t>(h) * w; }
  friend bool operator==(const Shape&, const Shape&) = default;
  std::string str() const;
};

namespace detail {

template <typename T>
struct TensorStorage {
  Shape shape;
  std::vector<T> data;
  std::vector<T> grad;
  bool requires_grad = false;
};

}  // namespace detail

/// Dense rank-4 array with optional participation in the gradient tape.
///
/// Copies are cheap handles onto shared storage. Operations never write into
/// their inputs; only leaves are updated in place (by initializers and the
/// optimizer) through mutable_data().
template <typename T>
class BasicTensor {
 public:
  using value_type = T;

  BasicTensor() = default;

  explicit BasicTensor(Shape shape, T fill = T(0))
      : impl_(std::make_shared<detail::TensorStorage<T>>()) {
    check_extents(shape);
    impl_->shape = shape;
    impl_->data.assign(shape.numel(), fill);
  }

  BasicTensor(Shape shape, std::vector<T> values)
      : impl_(std::make_shared<detail::TensorStorage<T>>()) {
    check_extents(shape);
    if (values.size() != shape.numel()) {
      throw ShapeError("tensor data length " + std::to_string(values.size()) +
                       " does not match shape " + shape.str());
    }
    impl_->shape = shape;
    impl_->data = std::move(values);
  }

  static BasicTensor scalar(T value) { return BasicTensor({1, 1, 1, 1}, value); }

  bool defined() const { return impl_ != nullptr; }
  const Shape& shape() const { return storage().shape; }
  std::size_t numel() const { return storage().data.size(); }

  std::span<const T> data() const { return storage().data; }
  std::span<T> mutable_data() { return storage().data; }

  T at(int n, int c, int y, int x) const {
    const Shape& s = shape();
    return storage().data[((static_cast<std::size_t>(n) * s.c + c) * s.h + y) * s.w + x];
  }

  T item() const {
    if (numel() != 1) throw ShapeError("item() on non-scalar tensor " + shape().str());
    return storage().data[0];
  }

  bool requires_grad() const { return impl_ && impl_->requires_grad; }
  BasicTensor& set_requires_grad(bool on) {
    storage().requires_grad = on;
    return *this;
  }

  bool has_grad() const { return impl_ && !impl_->grad.empty(); }
  std::span<const T> grad() const { return storage().grad; }

  /// Gradient accumulator, allocated zeroed on first use. Autograd internal.
  std::span<T> grad_buffer() const {
    auto& s = storage();
    if (s.grad.empty()) s.grad.assign(s.data.size(), T(0));
    return s.grad;
  }

  void zero_grad() { storage().grad.clear(); }

  /// Deep copy of the values without graph participation.
  BasicTensor detach() const { return BasicTensor(shape(), storage().data); }

  template <typename U>
  BasicTensor<U> cast() const {
    const auto& src = storage().data;
    std::vector<U> out(src.begin(), src.end());
    return BasicTensor<U>(shape(), std::move(out));
  }

  bool shares_storage(const BasicTensor& other) const { return impl_ == other.impl_; }

 private:
  static void check_extents(const Shape& s) {
    if (s.n < 0 || s.c < 0 || s.h < 0 || s.w < 0) {
      throw ShapeError("negative extent in shape " + s.str());
    }
  }
  detail::TensorStorage<T>& storage() const {
    if (!impl_) throw std::logic_error("use of undefined tensor");
    return *impl_;
  }

  std::shared_ptr<detail::TensorStorage<T>> impl_;
};

using Tensor = BasicTensor<float>;
using TensorD = BasicTensor<double>;

/// Thread-local ordered record of differentiable operations.
///
/// Each record is a closure that reads its output's gradient and accumulates
/// into its inputs. backward() replays the records once, newest first, and
/// then clears the tape.
class Graph {
 public:
  static Graph& local();

  void record(std::function<void()> step) { steps_.push_back(std::move(step)); }
  std::size_t size() const { return steps_.size(); }
  void clear() { steps_.clear(); }
  void replay_reverse();

 private:
  std::vector<std::function<void()>> steps_;
};

bool grad_enabled();

/// Disables tape recording on the current thread for its lifetime.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

namespace detail {

template <typename T>
bool should_record(std::initializer_list<const BasicTensor<T>*> inputs) {
  if (!grad_enabled()) return false;
  for (const auto* t : inputs) {
    if (t->requires_grad()) return true;
  }
  return false;
}

/// Marks `out` as tape-tracked and records `fn(grad_out)` for the reverse pass.
template <typename T, typename Fn>
void record(BasicTensor<T>& out, Fn&& fn) {
  out.set_requires_grad(true);
  Graph::local().record([out, fn = std::forward<Fn>(fn)]() mutable {
    if (out.has_grad()) fn(out.grad());
  });
}

template <typename T>
void accumulate(const BasicTensor<T>& t, std::span<const T> g) {
  if (!t.requires_grad()) return;
  auto dst = t.grad_buffer();
  for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += g[i];
}

}  // namespace detail

/// Reverse pass from a scalar loss. Populates grad on every tracked leaf and
/// consumes the thread's tape.
template <typename T>
void backward(const BasicTensor<T>& loss);

}  // namespace nechdr
