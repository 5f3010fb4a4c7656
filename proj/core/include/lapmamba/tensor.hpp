#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "lapmamba/error.hpp"
#include "lapmamba/rng.hpp"

namespace lapmamba {

using Shape = std::vector<std::int64_t>;

std::string shape_str(const Shape& s);
std::int64_t shape_numel(const Shape& s);

struct TensorImpl {
  Shape shape;
  std::vector<double> data;
  bool requires_grad = false;
  std::vector<double> grad;  // empty until first accumulation

  std::vector<double>& ensure_grad();
};

// Value-semantics handle to shared dense storage. Image data uses NCHW order.
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape);
  static Tensor full(Shape shape, double value);
  static Tensor from_data(Shape shape, std::vector<double> data);
  static Tensor scalar(double value);
  // Uniform in [lo, hi).
  static Tensor uniform(Shape shape, Rng& rng, double lo, double hi);
  static Tensor randn(Shape shape, Rng& rng, double stddev = 1.0);

  bool defined() const { return impl_ != nullptr; }
  const Shape& shape() const { return impl_->shape; }
  int rank() const { return static_cast<int>(impl_->shape.size()); }
  std::int64_t dim(int i) const { return impl_->shape[static_cast<size_t>(i)]; }
  std::int64_t numel() const { return static_cast<std::int64_t>(impl_->data.size()); }

  std::vector<double>& data() { return impl_->data; }
  const std::vector<double>& data() const { return impl_->data; }
  double item() const;  // rank-0 / single-element tensors only

  bool requires_grad() const { return impl_->requires_grad; }
  Tensor& set_requires_grad(bool v);

  bool has_grad() const { return !impl_->grad.empty(); }
  // Grad as a same-shape vector; zeros if never touched by backward.
  std::vector<double> grad() const;
  void zero_grad();

  // Identical shape check helper used by elementwise ops.
  bool same_shape(const Tensor& other) const { return impl_->shape == other.impl_->shape; }

  std::shared_ptr<TensorImpl> impl() const { return impl_; }

 private:
  explicit Tensor(std::shared_ptr<TensorImpl> impl) : impl_(std::move(impl)) {}
  std::shared_ptr<TensorImpl> impl_;
  friend Tensor make_tensor(Shape, std::vector<double>);
};

Tensor make_tensor(Shape shape, std::vector<double> data);

// Ordered record of executed operations. Ops append backward closures while a
// tape is active; backward() replays them in reverse construction order.
class Tape {
 public:
  Tape();
  ~Tape();
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  void record(std::function<void()> backward_fn);
  std::size_t size() const { return entries_.size(); }

  // loss must be a scalar on this tape. Populates grads of every reachable
  // requires_grad leaf. A second backward on the same tape is an error
  // (double backward is unsupported).
  void backward(const Tensor& loss);

  void clear();

  static Tape* active();

 private:
  std::vector<std::function<void()>> entries_;
  bool consumed_ = false;
  Tape* prev_ = nullptr;
};

// Suspends recording inside a scope (inference, finite-difference probes).
class NoGradScope {
 public:
  NoGradScope();
  ~NoGradScope();
  NoGradScope(const NoGradScope&) = delete;
  NoGradScope& operator=(const NoGradScope&) = delete;

 private:
  Tape* saved_;
};

// When enabled, every op output is checked for NaN/Inf and throws on the
// first non-finite value instead of letting it propagate.
void set_finite_checks(bool enabled);
bool finite_checks_enabled();
void check_finite(const Tensor& t, const char* op_name);

// True when a tape is active and any input requires grad; marks the output.
bool grad_enabled(std::initializer_list<const Tensor*> inputs);

}  // namespace lapmamba
