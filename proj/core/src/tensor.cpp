#include "lapmamba/tensor.hpp"

#include <cmath>
#include <sstream>

namespace lapmamba {

namespace {
thread_local Tape* g_active_tape = nullptr;
bool g_finite_checks = false;
}  // namespace

std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << "[";
  for (size_t i = 0; i < s.size(); ++i) {
    if (i) os << ",";
    os << s[i];
  }
  os << "]";
  return os.str();
}

std::int64_t shape_numel(const Shape& s) {
  std::int64_t n = 1;
  for (auto e : s) n *= e;
  return n;
}

std::vector<double>& TensorImpl::ensure_grad() {
  if (grad.empty()) grad.assign(data.size(), 0.0);
  return grad;
}

Tensor make_tensor(Shape shape, std::vector<double> data) {
  if (shape_numel(shape) != static_cast<std::int64_t>(data.size())) {
    throw DimensionError("tensor: shape " + shape_str(shape) + " does not match buffer of " +
                         std::to_string(data.size()) + " elements");
  }
  auto impl = std::make_shared<TensorImpl>();
  impl->shape = std::move(shape);
  impl->data = std::move(data);
  return Tensor(std::move(impl));
}

Tensor Tensor::zeros(Shape shape) {
  auto n = shape_numel(shape);
  return make_tensor(std::move(shape), std::vector<double>(static_cast<size_t>(n), 0.0));
}

Tensor Tensor::full(Shape shape, double value) {
  auto n = shape_numel(shape);
  return make_tensor(std::move(shape), std::vector<double>(static_cast<size_t>(n), value));
}

Tensor Tensor::from_data(Shape shape, std::vector<double> data) {
  return make_tensor(std::move(shape), std::move(data));
}

Tensor Tensor::scalar(double value) { return make_tensor({}, {value}); }

Tensor Tensor::uniform(Shape shape, Rng& rng, double lo, double hi) {
  auto n = static_cast<size_t>(shape_numel(shape));
  std::vector<double> d(n);
  for (auto& v : d) v = rng.uniform(lo, hi);
  return make_tensor(std::move(shape), std::move(d));
}

Tensor Tensor::randn(Shape shape, Rng& rng, double stddev) {
  auto n = static_cast<size_t>(shape_numel(shape));
  std::vector<double> d(n);
  for (auto& v : d) v = stddev * rng.normal();
  return make_tensor(std::move(shape), std::move(d));
}

double Tensor::item() const {
  if (numel() != 1) {
    throw ContractError("item(): tensor has " + std::to_string(numel()) + " elements, expected 1");
  }
  return impl_->data[0];
}

Tensor& Tensor::set_requires_grad(bool v) {
  impl_->requires_grad = v;
  return *this;
}

std::vector<double> Tensor::grad() const {
  if (impl_->grad.empty()) return std::vector<double>(impl_->data.size(), 0.0);
  return impl_->grad;
}

void Tensor::zero_grad() { impl_->grad.clear(); }

Tape::Tape() {
  prev_ = g_active_tape;
  g_active_tape = this;
}

Tape::~Tape() { g_active_tape = prev_; }

Tape* Tape::active() { return g_active_tape; }

void Tape::record(std::function<void()> backward_fn) {
  entries_.push_back(std::move(backward_fn));
}

void Tape::backward(const Tensor& loss) {
  if (loss.numel() != 1) {
    throw ContractError("backward: loss must be scalar, got shape " + shape_str(loss.shape()));
  }
  if (!loss.requires_grad()) {
    throw ContractError("backward: loss does not require grad (no recorded graph)");
  }
  if (consumed_) {
    throw ContractError("backward: tape already consumed; double backward is unsupported");
  }
  consumed_ = true;
  loss.impl()->ensure_grad()[0] = 1.0;
  for (auto it = entries_.rbegin(); it != entries_.rend(); ++it) (*it)();
}

void Tape::clear() {
  entries_.clear();
  consumed_ = false;
}

NoGradScope::NoGradScope() {
  saved_ = g_active_tape;
  g_active_tape = nullptr;
}

NoGradScope::~NoGradScope() { g_active_tape = saved_; }

void set_finite_checks(bool enabled) { g_finite_checks = enabled; }
bool finite_checks_enabled() { return g_finite_checks; }

void check_finite(const Tensor& t, const char* op_name) {
  if (!g_finite_checks) return;
  for (double v : t.data()) {
    if (!std::isfinite(v)) {
      throw Error(std::string("non-finite value produced by ") + op_name);
    }
  }
}

bool grad_enabled(std::initializer_list<const Tensor*> inputs) {
  if (g_active_tape == nullptr) return false;
  for (const Tensor* t : inputs) {
    if (t->defined() && t->requires_grad()) return true;
  }
  return false;
}

}  // namespace lapmamba
