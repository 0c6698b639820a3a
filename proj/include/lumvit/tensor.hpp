#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <random>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "lumvit/errors.hpp"

namespace lumvit {

using Shape = std::vector<std::int64_t>;

inline std::int64_t shape_numel(const Shape& s) {
  std::int64_t n = 1;
  for (auto e : s) n *= e;
  return n;
}

inline std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << "[";
  for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "x" : "") << s[i];
  os << "]";
  return os.str();
}

template <class Real>
struct TensorImpl {
  Shape shape;
  std::vector<Real> value;
  std::vector<Real> grad;  // empty until first accumulation
  bool requires_grad = false;
};

// Dense tensor with shared storage. Copies alias the same buffer, which is
// what the tape relies on: a backward closure captures the Tensor by value
// and accumulates into the original gradient buffer.
template <class Real>
class Tensor {
 public:
  using Scalar = Real;

  Tensor() : impl_(std::make_shared<TensorImpl<Real>>()) {}

  static Tensor zeros(Shape shape, bool requires_grad = false) {
    Tensor t;
    t.impl_->shape = std::move(shape);
    t.impl_->value.assign(static_cast<std::size_t>(shape_numel(t.impl_->shape)), Real(0));
    t.impl_->requires_grad = requires_grad;
    return t;
  }

  static Tensor full(Shape shape, Real v, bool requires_grad = false) {
    Tensor t = zeros(std::move(shape), requires_grad);
    for (auto& x : t.impl_->value) x = v;
    return t;
  }

  static Tensor from(Shape shape, std::vector<Real> vals, bool requires_grad = false) {
    if (static_cast<std::int64_t>(vals.size()) != shape_numel(shape))
      throw DimensionError("Tensor::from: " + std::to_string(vals.size()) +
                           " values for shape " + shape_str(shape));
    Tensor t;
    t.impl_->shape = std::move(shape);
    t.impl_->value = std::move(vals);
    t.impl_->requires_grad = requires_grad;
    return t;
  }

  static Tensor scalar(Real v, bool requires_grad = false) {
    return from({1}, {v}, requires_grad);
  }

  // Truncated normal init (resample outside two standard deviations).
  static Tensor trunc_normal(Shape shape, double stddev, std::mt19937_64& rng,
                             bool requires_grad = true) {
    Tensor t = zeros(std::move(shape), requires_grad);
    std::normal_distribution<double> dist(0.0, stddev);
    for (auto& x : t.impl_->value) {
      double v = dist(rng);
      while (std::abs(v) > 2.0 * stddev) v = dist(rng);
      x = static_cast<Real>(v);
    }
    return t;
  }

  const Shape& shape() const { return impl_->shape; }
  int rank() const { return static_cast<int>(impl_->shape.size()); }
  std::int64_t dim(int i) const { return impl_->shape[static_cast<std::size_t>(i)]; }
  std::int64_t numel() const { return static_cast<std::int64_t>(impl_->value.size()); }

  Real* data() { return impl_->value.data(); }
  const Real* data() const { return impl_->value.data(); }
  std::vector<Real>& values() { return impl_->value; }
  const std::vector<Real>& values() const { return impl_->value; }

  Real item() const {
    if (numel() != 1) throw DimensionError("item(): tensor is not scalar, shape " + shape_str(shape()));
    return impl_->value[0];
  }

  bool requires_grad() const { return impl_->requires_grad; }
  void set_requires_grad(bool rg) { impl_->requires_grad = rg; }

  bool has_grad() const { return !impl_->grad.empty(); }
  std::vector<Real>& grad() {
    ensure_grad();
    return impl_->grad;
  }
  const std::vector<Real>& grad_view() const { return impl_->grad; }

  void ensure_grad() {
    if (impl_->grad.empty()) impl_->grad.assign(impl_->value.size(), Real(0));
  }

  void zero_grad() {
    if (!impl_->grad.empty()) std::fill(impl_->grad.begin(), impl_->grad.end(), Real(0));
  }

  void accumulate_grad(const Real* g, std::int64_t n) {
    ensure_grad();
    for (std::int64_t i = 0; i < n; ++i) impl_->grad[static_cast<std::size_t>(i)] += g[i];
  }

  bool all_finite() const {
    for (Real v : impl_->value)
      if (!std::isfinite(static_cast<double>(v))) return false;
    return true;
  }

  // Identity check (same underlying buffer), used by freezing audits.
  bool same_storage(const Tensor& other) const { return impl_ == other.impl_; }

 private:
  std::shared_ptr<TensorImpl<Real>> impl_;
};

// Wengert list: ops append their backward closure in execution order, so the
// list is already topologically sorted. backward() replays it once, in
// reverse.
template <class Real>
class Tape {
 public:
  void record(std::function<void()> fn) { entries_.push_back(std::move(fn)); }

  std::size_t size() const { return entries_.size(); }

  void run_backward() {
    for (auto it = entries_.rbegin(); it != entries_.rend(); ++it) (*it)();
  }

  void clear() { entries_.clear(); }

 private:
  std::vector<std::function<void()>> entries_;
};

template <class Real>
inline thread_local Tape<Real>* g_active_tape = nullptr;

template <class Real>
inline Tape<Real>* active_tape() {
  return g_active_tape<Real>;
}

// Owns a tape for the duration of a scope (one training step, one gradient
// check). Nested scopes shadow the outer tape.
template <class Real>
class TapeScope {
 public:
  TapeScope() : prev_(g_active_tape<Real>) { g_active_tape<Real> = &tape_; }
  ~TapeScope() { g_active_tape<Real> = prev_; }
  TapeScope(const TapeScope&) = delete;
  TapeScope& operator=(const TapeScope&) = delete;

  Tape<Real>& tape() { return tape_; }

 private:
  Tape<Real> tape_;
  Tape<Real>* prev_;
};

// Disables recording within a scope (forward-only evaluation).
template <class Real>
class NoGradScope {
 public:
  NoGradScope() : prev_(g_active_tape<Real>) { g_active_tape<Real> = nullptr; }
  ~NoGradScope() { g_active_tape<Real> = prev_; }
  NoGradScope(const NoGradScope&) = delete;
  NoGradScope& operator=(const NoGradScope&) = delete;

 private:
  Tape<Real>* prev_;
};

// Seeds d(loss)/d(loss) = 1 and replays the active tape in reverse. The loss
// must be a scalar produced under the same tape.
template <class Real>
inline void backward(Tensor<Real> loss) {
  if (loss.numel() != 1)
    throw ValidationError("backward: loss must be scalar, got shape " + shape_str(loss.shape()));
  Tape<Real>* tape = active_tape<Real>();
  if (tape == nullptr) throw ValidationError("backward: no active tape");
  if (!loss.requires_grad())
    throw ValidationError("backward: loss does not depend on any tracked tensor");
  loss.ensure_grad();
  loss.grad()[0] += Real(1);
  tape->run_backward();
}

using Tensor32 = Tensor<float>;
using Tensor64 = Tensor<double>;

}  // namespace lumvit
