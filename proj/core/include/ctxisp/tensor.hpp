// Copyright (c) 2026 ctxisp contributors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstring>
#include <functional>
#include <initializer_list>
#include <memory>
#include <vector>

#include "ctxisp/common.hpp"

namespace ctxisp {

using Shape = std::vector<int>;

inline size_t shape_numel(const Shape& s) {
  size_t n = 1;
  for (int d : s) {
    CTXISP_CHECK(d > 0, "tensor dimension must be positive, got ", d);
    n *= size_t(d);
  }
  return n;
}

namespace detail {
// Recycling allocator for tensor storage. Step loops allocate the same
// buffer sizes over and over; returning large buffers to the OS each step
// costs mmap traffic and page faults that dwarf the arithmetic.
void* pool_acquire(size_t bytes);
void pool_release(void* p, size_t bytes);
}  // namespace detail

template <typename T>
class Tape;

template <typename T>
struct TensorData {
  Shape shape;
  size_t size = 0;
  T* values = nullptr;
  T* grad = nullptr;  // allocated on first use, zero-filled
  bool requires_grad = false;
  Tape<T>* tape = nullptr;

  ~TensorData() {
    if (values) detail::pool_release(values, size * sizeof(T));
    if (grad) detail::pool_release(grad, size * sizeof(T));
  }
  void ensure_grad() {
    if (!grad) {
      grad = static_cast<T*>(detail::pool_acquire(size * sizeof(T)));
      std::memset(grad, 0, size * sizeof(T));
    }
  }
};

// Reverse-mode tape: an ordered list of backward closures. backward() seeds
// the scalar loss gradient with 1, replays the closures in reverse, then
// clears the tape. Gradients accumulate additively into .grad buffers.
template <typename T>
class Tape {
 public:
  void record(std::function<void()> fn) { nodes_.push_back(std::move(fn)); }
  bool recording() const { return enabled_; }
  void set_recording(bool b) { enabled_ = b; }
  size_t size() const { return nodes_.size(); }
  void clear() { nodes_.clear(); }
  void replay_backward() {
    for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) (*it)();
  }

 private:
  std::vector<std::function<void()>> nodes_;
  bool enabled_ = true;
};

// Suspends tape recording for a scope (forward-only evaluation while
// parameters stay attached to a training tape).
template <typename T>
class NoGradGuard {
 public:
  explicit NoGradGuard(Tape<T>* tape) : tape_(tape) {
    if (tape_) {
      prev_ = tape_->recording();
      tape_->set_recording(false);
    }
  }
  ~NoGradGuard() {
    if (tape_) tape_->set_recording(prev_);
  }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  Tape<T>* tape_ = nullptr;
  bool prev_ = true;
};

// Shared-ownership handle to an n-dimensional row-major array. Copying a
// Tensor aliases the same storage; clone() makes an independent copy.
template <typename T>
class Tensor {
 public:
  Tensor() = default;

  static Tensor uninit(const Shape& shape) {
    Tensor t;
    t.d_ = std::make_shared<TensorData<T>>();
    t.d_->shape = shape;
    t.d_->size = shape_numel(shape);
    t.d_->values =
        static_cast<T*>(detail::pool_acquire(t.d_->size * sizeof(T)));
    return t;
  }
  static Tensor zeros(const Shape& shape) {
    Tensor t = uninit(shape);
    std::memset(t.data(), 0, t.size() * sizeof(T));
    return t;
  }
  static Tensor full(const Shape& shape, T value) {
    Tensor t = uninit(shape);
    T* p = t.data();
    for (size_t i = 0; i < t.size(); ++i) p[i] = value;
    return t;
  }
  static Tensor from(const Shape& shape, const std::vector<T>& values) {
    Tensor t = uninit(shape);
    CTXISP_CHECK(values.size() == t.size(), "value count ", values.size(),
                 " does not match shape volume ", t.size());
    std::memcpy(t.data(), values.data(), t.size() * sizeof(T));
    return t;
  }
  // Trainable leaf bound to a tape.
  static Tensor variable(const Shape& shape, Tape<T>* tape) {
    Tensor t = zeros(shape);
    t.d_->requires_grad = true;
    t.d_->tape = tape;
    return t;
  }

  bool defined() const { return d_ != nullptr; }
  const Shape& shape() const { return d_->shape; }
  int rank() const { return int(d_->shape.size()); }
  int dim(int i) const { return d_->shape[size_t(i)]; }
  size_t size() const { return d_ ? d_->size : 0; }

  T* data() { return d_->values; }
  const T* data() const { return d_->values; }

  bool requires_grad() const { return d_ && d_->requires_grad; }
  Tape<T>* tape() const { return d_ ? d_->tape : nullptr; }
  void attach(Tape<T>* tape) {
    d_->requires_grad = true;
    d_->tape = tape;
  }

  // Mutable gradient buffer, allocated (and zeroed) on first access.
  T* grad() {
    d_->ensure_grad();
    return d_->grad;
  }
  const T* grad_data() const { return d_ ? d_->grad : nullptr; }
  bool has_grad() const { return d_ && d_->grad != nullptr; }
  void zero_grad() {
    if (d_ && d_->grad) std::memset(d_->grad, 0, d_->size * sizeof(T));
  }

  T item() const {
    CTXISP_CHECK(d_ && d_->size == 1, "item() requires a scalar tensor");
    return d_->values[0];
  }
  T at(std::initializer_list<int> idx) const {
    CTXISP_CHECK(idx.size() == d_->shape.size(), "at(): rank mismatch");
    size_t off = 0, stride = 1;
    auto it = idx.end();
    for (int a = int(idx.size()) - 1; a >= 0; --a) {
      --it;
      CTXISP_CHECK(*it >= 0 && *it < d_->shape[size_t(a)],
                   "at(): index out of range on axis ", a);
      off += size_t(*it) * stride;
      stride *= size_t(d_->shape[size_t(a)]);
    }
    return d_->values[off];
  }

  void fill(T v) {
    T* p = data();
    for (size_t i = 0; i < size(); ++i) p[i] = v;
  }
  void copy_values_from(const Tensor& src) {
    CTXISP_CHECK(src.size() == size(), "copy_values_from: size mismatch");
    std::memcpy(data(), src.data(), size() * sizeof(T));
  }
  // Deep copy of values; detached from any tape, no gradient.
  Tensor clone() const {
    Tensor t = uninit(d_->shape);
    std::memcpy(t.data(), d_->values, d_->size * sizeof(T));
    return t;
  }

  std::shared_ptr<TensorData<T>> impl() const { return d_; }

 private:
  std::shared_ptr<TensorData<T>> d_;
};

template <typename T>
void backward(Tensor<T>& loss) {
  CTXISP_CHECK(loss.size() == 1, "backward() requires a scalar loss");
  CTXISP_CHECK(loss.tape() != nullptr, "backward() requires a taped tensor");
  loss.grad()[0] += T(1);
  loss.tape()->replay_backward();
  loss.tape()->clear();
}

}  // namespace ctxisp
