#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <numeric>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "srl/core/error.hpp"

namespace srl {

using Shape = std::vector<int>;

inline std::size_t shape_numel(const Shape& s) {
  std::size_t n = 1;
  for (int d : s) n *= static_cast<std::size_t>(d);
  return n;
}

inline std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << "[";
  for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "x" : "") << s[i];
  os << "]";
  return os.str();
}

namespace detail {

template <typename T>
struct ArrayData {
  Shape shape;
  std::vector<T> v;  // values, row-major
  std::vector<T> g;  // gradient; allocated iff tracked
  bool tracked = false;
};

}  // namespace detail

/// Dense row-major array of IEEE floating values with an optional gradient
/// buffer. Copies are shallow (shared storage); use clone() for a deep copy.
template <typename T>
class Array {
 public:
  Array() = default;

  static Array zeros(Shape shape) {
    Array a;
    a.d_ = std::make_shared<detail::ArrayData<T>>();
    a.d_->shape = std::move(shape);
    a.d_->v.assign(shape_numel(a.d_->shape), T(0));
    return a;
  }

  static Array full(Shape shape, T value) {
    Array a = zeros(std::move(shape));
    for (T& x : a.d_->v) x = value;
    return a;
  }

  static Array from(Shape shape, std::vector<T> values) {
    if (shape_numel(shape) != values.size())
      throw ShapeError("Array::from: " + shape_str(shape) + " needs " +
                       std::to_string(shape_numel(shape)) + " values, got " +
                       std::to_string(values.size()));
    Array a;
    a.d_ = std::make_shared<detail::ArrayData<T>>();
    a.d_->shape = std::move(shape);
    a.d_->v = std::move(values);
    return a;
  }

  static Array scalar(T value) { return from({1}, {value}); }

  bool defined() const { return static_cast<bool>(d_); }
  const Shape& shape() const { return d_->shape; }
  int rank() const { return static_cast<int>(d_->shape.size()); }
  int dim(int i) const { return d_->shape[static_cast<std::size_t>(i)]; }
  std::size_t numel() const { return d_->v.size(); }

  // 2-D accessors; most ops in this engine are matrix-shaped.
  int rows() const { return d_->shape[0]; }
  int cols() const { return d_->shape[1]; }

  // Array is a shared handle (shallow copies alias one buffer), so the
  // accessors are const-qualified like shared_ptr's: constness of the handle
  // does not propagate to the storage.
  T* data() const { return d_->v.data(); }
  std::vector<T>& values() const { return d_->v; }

  T* grad() const { return d_->g.data(); }
  std::vector<T>& grad_values() const { return d_->g; }

  bool tracked() const { return d_ && d_->tracked; }

  /// Marks this array as a trainable leaf: gradients accumulate into it.
  void set_param() {
    d_->tracked = true;
    d_->g.assign(d_->v.size(), T(0));
  }

  void zero_grad() const {
    if (d_->tracked) std::fill(d_->g.begin(), d_->g.end(), T(0));
  }

  /// Deep copy of values (gradient state is not copied).
  Array clone() const {
    Array a = Array::from(d_->shape, d_->v);
    return a;
  }

  T item() const {
    if (numel() != 1)
      throw ShapeError("item(): array has " + std::to_string(numel()) +
                       " elements");
    return d_->v[0];
  }

  T& at(int i) const { return d_->v[static_cast<std::size_t>(i)]; }
  T& at(int r, int c) const {
    return d_->v[static_cast<std::size_t>(r) * cols() + c];
  }

  // Identity of the underlying storage; used in tests.
  const void* node_id() const { return d_.get(); }

  const std::shared_ptr<detail::ArrayData<T>>& node() const { return d_; }

 private:
  std::shared_ptr<detail::ArrayData<T>> d_;
};

/// Ordered record of executed primitive operations. backward() replays the
/// record in reverse execution order, visiting each operation exactly once.
template <typename T>
class Tape {
 public:
  void push(std::function<void()> step) { steps_.push_back(std::move(step)); }

  std::size_t size() const { return steps_.size(); }

  void clear() { steps_.clear(); }

  /// Seeds d(loss)/d(loss) = 1 and propagates to every tracked array.
  void backward(const Array<T>& loss) {
    if (!loss.defined() || loss.numel() != 1)
      throw ValueError("backward: loss must be a scalar array");
    if (!loss.tracked())
      throw ValueError("backward: loss was not produced under the tape");
    loss.grad_values()[0] += T(1);
    for (auto it = steps_.rbegin(); it != steps_.rend(); ++it) (*it)();
  }

 private:
  std::vector<std::function<void()>> steps_;
};

namespace detail {

template <typename T>
inline Tape<T>*& current_tape() {
  thread_local Tape<T>* t = nullptr;
  return t;
}

}  // namespace detail

/// Activates a tape for the current thread; ops executed in this scope that
/// touch tracked arrays are recorded.
template <typename T>
class TapeScope {
 public:
  explicit TapeScope(Tape<T>& tape) : prev_(detail::current_tape<T>()) {
    detail::current_tape<T>() = &tape;
  }
  ~TapeScope() { detail::current_tape<T>() = prev_; }
  TapeScope(const TapeScope&) = delete;
  TapeScope& operator=(const TapeScope&) = delete;

 private:
  Tape<T>* prev_;
};

/// Suppresses recording (evaluation / teacher forward passes).
template <typename T>
class NoGradScope {
 public:
  NoGradScope() : prev_(detail::current_tape<T>()) {
    detail::current_tape<T>() = nullptr;
  }
  ~NoGradScope() { detail::current_tape<T>() = prev_; }
  NoGradScope(const NoGradScope&) = delete;
  NoGradScope& operator=(const NoGradScope&) = delete;

 private:
  Tape<T>* prev_;
};

}  // namespace srl
