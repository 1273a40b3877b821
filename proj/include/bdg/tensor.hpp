#pragma once

#include <algorithm>
#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "bdg/error.hpp"
#include "bdg/shape.hpp"

namespace bdg {

template <typename T>
class Tape;

namespace detail {

template <typename T>
struct Node {
  Shape shape;
  std::vector<T> data;
  std::vector<T> grad;  // empty until first accumulation
  bool requires_grad = false;
  const Tape<T>* producer = nullptr;  // tape that recorded the op creating this node
};

}  // namespace detail

/// Dense (n, c, h, w) array with an optional gradient buffer.
///
/// A Tensor is a shared handle: copies alias the same storage, the way
/// autograd tensors usually behave. Use `detach()` for an independent copy.
/// Values are mutated only through `data_mut()`, which is reserved for
/// parameter updates and for ops filling freshly created outputs.
template <typename T = float>
class Tensor {
 public:
  using value_type = T;

  Tensor() = default;

  explicit Tensor(Shape shape, T fill = T{0}) : node_(std::make_shared<detail::Node<T>>()) {
    if (!shape.valid()) throw ShapeError("tensor shape components must be >= 1, got " + shape.str());
    node_->shape = shape;
    node_->data.assign(static_cast<std::size_t>(shape.numel()), fill);
  }

  Tensor(Shape shape, std::vector<T> values) : node_(std::make_shared<detail::Node<T>>()) {
    if (!shape.valid()) throw ShapeError("tensor shape components must be >= 1, got " + shape.str());
    if (static_cast<std::int64_t>(values.size()) != shape.numel()) {
      throw ShapeError("tensor data length " + std::to_string(values.size()) +
                       " does not match shape " + shape.str());
    }
    node_->shape = shape;
    node_->data = std::move(values);
  }

  static Tensor zeros(Shape shape) { return Tensor(shape, T{0}); }
  static Tensor ones(Shape shape) { return Tensor(shape, T{1}); }
  static Tensor scalar(T v) { return Tensor(Shape{}, v); }

  bool defined() const { return static_cast<bool>(node_); }
  const Shape& shape() const { return node().shape; }
  std::int64_t numel() const { return node().shape.numel(); }

  std::span<const T> data() const { return node().data; }
  std::span<T> data_mut() { return node().data; }

  T item() const {
    if (numel() != 1) throw ShapeError("item() on non-scalar tensor " + shape().str());
    return node().data[0];
  }

  T at(std::int64_t n, std::int64_t c, std::int64_t h, std::int64_t w) const {
    const Shape& s = shape();
    return node().data[static_cast<std::size_t>(((n * s.c + c) * s.h + h) * s.w + w)];
  }

  bool requires_grad() const { return node().requires_grad; }
  Tensor& set_requires_grad(bool on) {
    node().requires_grad = on;
    if (!on) node().grad.clear();
    return *this;
  }

  bool has_grad() const { return !node().grad.empty(); }

  std::span<const T> grad() const {
    if (!has_grad()) throw TapeError("tensor " + shape().str() + " has no gradient");
    return node().grad;
  }

  /// Gradient buffer, zero-allocated on first use. Const because the
  /// gradient belongs to the shared node, not to this handle.
  std::span<T> grad_mut() const {
    auto& g = node().grad;
    if (g.empty()) g.assign(node().data.size(), T{0});
    return g;
  }

  void zero_grad() const {
    auto& g = node().grad;
    std::fill(g.begin(), g.end(), T{0});
  }

  /// Independent copy of the values; no gradient record.
  Tensor detach() const { return Tensor(shape(), node().data); }

  bool same_storage(const Tensor& other) const { return node_ == other.node_; }
  const Tape<T>* producer() const { return node().producer; }

  /// Used by ops to mark a fresh output as recorded on `tape`.
  void mark_recorded(const Tape<T>* tape) {
    node().requires_grad = true;
    node().producer = tape;
  }

 private:
  detail::Node<T>& node() const {
    if (!node_) throw ShapeError("use of undefined tensor");
    return *node_;
  }

  std::shared_ptr<detail::Node<T>> node_;
};

/// Ordered record of differentiable ops executed on the owning thread.
///
/// Constructing a tape makes it the thread's active tape until it is
/// destroyed (tapes nest LIFO). Ops whose inputs require grad append a
/// backward closure; `backward()` replays the closures in reverse order
/// exactly once and then releases them.
template <typename T>
class Tape {
 public:
  Tape() : previous_(current_) { current_ = this; }
  ~Tape() { current_ = previous_; }
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  static Tape* active() { return current_; }

  void record(std::function<void()> backward_fn) {
    if (consumed_) throw TapeError("tape already consumed by backward(); start a new tape");
    entries_.push_back(std::move(backward_fn));
  }

  std::size_t size() const { return entries_.size(); }
  bool consumed() const { return consumed_; }

  void backward(Tensor<T> loss) {
    if (consumed_) throw TapeError("backward() called twice on the same tape without a new forward");
    if (loss.numel() != 1) throw ShapeError("backward() requires a scalar loss, got " + loss.shape().str());
    if (!loss.requires_grad() || loss.producer() != this) {
      throw TapeError("loss is detached: it was not produced under this tape");
    }
    loss.grad_mut()[0] += T{1};
    // Closures may not record new entries; run from the back and release each.
    for (auto it = entries_.rbegin(); it != entries_.rend(); ++it) {
      (*it)();
      *it = nullptr;
    }
    entries_.clear();
    entries_.shrink_to_fit();
    consumed_ = true;
  }

 private:
  inline static thread_local Tape* current_ = nullptr;
  Tape* previous_;
  std::vector<std::function<void()>> entries_;
  bool consumed_ = false;
};

/// Active tape if any input requires grad, else nullptr.
template <typename T>
Tape<T>* recording_tape(std::initializer_list<const Tensor<T>*> inputs) {
  Tape<T>* tape = Tape<T>::active();
  if (tape == nullptr || tape->consumed()) return nullptr;
  for (const Tensor<T>* t : inputs) {
    if (t->requires_grad()) return tape;
  }
  return nullptr;
}

template <typename T>
Tape<T>* recording_tape(std::span<const Tensor<T>> inputs) {
  Tape<T>* tape = Tape<T>::active();
  if (tape == nullptr || tape->consumed()) return nullptr;
  for (const Tensor<T>& t : inputs) {
    if (t.requires_grad()) return tape;
  }
  return nullptr;
}

/// Converts between element types (f64 oracle runs from f32 data and back).
template <typename To, typename From>
Tensor<To> cast(const Tensor<From>& x) {
  auto src = x.data();
  std::vector<To> out(src.begin(), src.end());
  return Tensor<To>(x.shape(), std::move(out));
}

}  // namespace bdg
