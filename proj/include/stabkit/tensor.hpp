#pragma once

#include <cstdint>
#include <memory>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace stabkit {

using Shape = std::vector<int>;

inline std::int64_t shape_numel(const Shape& s) {
  std::int64_t n = 1;
  for (int e : s) {
    if (e <= 0) throw std::invalid_argument("tensor shape extents must be positive");
    n *= e;
  }
  return n;
}

inline std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
  os << ']';
  return os.str();
}

struct TensorImpl {
  Shape shape;
  std::vector<double> value;
  std::vector<double> grad;  // allocated iff requires_grad
  bool requires_grad = false;
  bool frozen = false;  // parameter locked against optimizer updates
};

// Handle with shared storage: copies alias the same values and gradient
// accumulator, so a leaf used at several tape positions accumulates into
// one grad buffer.
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape) {
    Tensor t;
    auto n = shape_numel(shape);
    t.impl_ = std::make_shared<TensorImpl>();
    t.impl_->shape = std::move(shape);
    t.impl_->value.assign(static_cast<std::size_t>(n), 0.0);
    return t;
  }

  static Tensor full(Shape shape, double v) {
    Tensor t = zeros(std::move(shape));
    for (auto& x : t.impl_->value) x = v;
    return t;
  }

  static Tensor from(Shape shape, std::vector<double> values) {
    auto n = shape_numel(shape);
    if (static_cast<std::int64_t>(values.size()) != n)
      throw std::invalid_argument("tensor data length " + std::to_string(values.size()) +
                                  " does not match shape " + shape_str(shape));
    Tensor t;
    t.impl_ = std::make_shared<TensorImpl>();
    t.impl_->shape = std::move(shape);
    t.impl_->value = std::move(values);
    return t;
  }

  static Tensor scalar(double v) { return from({1}, {v}); }

  bool defined() const { return impl_ != nullptr; }
  const Shape& shape() const { return impl_->shape; }
  std::int64_t size() const { return static_cast<std::int64_t>(impl_->value.size()); }

  double* data() { return impl_->value.data(); }
  const double* data() const { return impl_->value.data(); }
  std::vector<double>& values() { return impl_->value; }
  const std::vector<double>& values() const { return impl_->value; }

  double item() const {
    if (size() != 1) throw std::invalid_argument("item() needs a single-element tensor, got " + shape_str(shape()));
    return impl_->value[0];
  }

  bool requires_grad() const { return impl_ && impl_->requires_grad; }

  Tensor& set_requires_grad(bool flag) {
    impl_->requires_grad = flag;
    if (flag && impl_->grad.size() != impl_->value.size())
      impl_->grad.assign(impl_->value.size(), 0.0);
    if (!flag) impl_->grad.clear();
    return *this;
  }

  std::vector<double>& grad() {
    if (!requires_grad()) throw std::logic_error("tensor has no gradient accumulator");
    return impl_->grad;
  }
  const std::vector<double>& grad() const {
    if (!requires_grad()) throw std::logic_error("tensor has no gradient accumulator");
    return impl_->grad;
  }

  void zero_grad() {
    if (requires_grad()) std::fill(impl_->grad.begin(), impl_->grad.end(), 0.0);
  }

  bool frozen() const { return impl_ && impl_->frozen; }
  void set_frozen(bool flag) { impl_->frozen = flag; }

  // Deep copy of values only; the clone is a detached constant.
  Tensor clone_values() const {
    Tensor t;
    t.impl_ = std::make_shared<TensorImpl>();
    t.impl_->shape = impl_->shape;
    t.impl_->value = impl_->value;
    return t;
  }

  bool same_storage(const Tensor& o) const { return impl_ == o.impl_; }

  TensorImpl* impl() const { return impl_.get(); }

 private:
  std::shared_ptr<TensorImpl> impl_;
};

inline bool same_shape(const Tensor& a, const Tensor& b) { return a.shape() == b.shape(); }

[[noreturn]] inline void throw_shape_error(const char* op, const Tensor& a, const Tensor& b) {
  throw std::invalid_argument(std::string(op) + ": shape mismatch " + shape_str(a.shape()) +
                              " vs " + shape_str(b.shape()));
}

[[noreturn]] inline void throw_shape_error(const char* op, const Tensor& a, const std::string& expected) {
  throw std::invalid_argument(std::string(op) + ": got shape " + shape_str(a.shape()) +
                              ", expected " + expected);
}

}  // namespace stabkit
