#pragma once

#include <cmath>
#include <cstddef>
#include <functional>
#include <initializer_list>
#include <memory>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "lrq/error.hpp"
#include "lrq/memory.hpp"

namespace lrq {

using Shape = std::vector<std::size_t>;

inline std::size_t shape_numel(const Shape& s) {
  return std::accumulate(s.begin(), s.end(), std::size_t{1}, std::multiplies<>{});
}

inline std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "x" : "") << s[i];
  os << ']';
  return os.str();
}

class Tape;

/// Dense row-major f64 array. Storage is shared between copies and treated as
/// immutable once a tensor is bound to a tape; `mutable_values()` copies on
/// write when the buffer is shared.
class Tensor {
 public:
  Tensor() : Tensor(Shape{}, Buffer(1, 0.0)) {}

  Tensor(Shape shape, Buffer data)
      : shape_(std::move(shape)), data_(std::make_shared<Buffer>(std::move(data))) {
    if (shape_numel(shape_) != data_->size()) {
      throw DimensionError("tensor shape " + shape_str(shape_) + " does not match " +
                           std::to_string(data_->size()) + " values");
    }
  }

  Tensor(Shape shape, std::initializer_list<double> values)
      : Tensor(std::move(shape), Buffer(values.begin(), values.end())) {}

  static Tensor full(Shape shape, double value) {
    const std::size_t n = shape_numel(shape);
    return Tensor(std::move(shape), Buffer(n, value));
  }
  static Tensor zeros(Shape shape) { return full(std::move(shape), 0.0); }
  static Tensor ones(Shape shape) { return full(std::move(shape), 1.0); }
  static Tensor scalar(double v) { return Tensor(Shape{}, Buffer(1, v)); }

  static Tensor vector(std::initializer_list<double> values) {
    return Tensor(Shape{values.size()}, values);
  }

  static Tensor matrix(std::initializer_list<std::initializer_list<double>> rows) {
    const std::size_t r = rows.size();
    const std::size_t c = r ? rows.begin()->size() : 0;
    Buffer b;
    b.reserve(r * c);
    for (const auto& row : rows) {
      if (row.size() != c) throw DimensionError("ragged matrix literal");
      b.insert(b.end(), row.begin(), row.end());
    }
    return Tensor(Shape{r, c}, std::move(b));
  }

  static Tensor identity(std::size_t n) {
    Tensor t = zeros({n, n});
    auto v = t.mutable_values();
    for (std::size_t i = 0; i < n; ++i) v[i * n + i] = 1.0;
    return t;
  }

  const Shape& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t numel() const { return data_->size(); }
  std::size_t dim(std::size_t i) const { return shape_.at(i); }

  std::size_t rows() const {
    require_matrix("rows");
    return shape_[0];
  }
  std::size_t cols() const {
    require_matrix("cols");
    return shape_[1];
  }

  std::span<const double> values() const { return {data_->data(), data_->size()}; }
  const double* data() const { return data_->data(); }

  /// Writable view of the storage. The result is detached from any tape.
  std::span<double> mutable_values() {
    if (data_.use_count() > 1) data_ = std::make_shared<Buffer>(*data_);
    tape_ = nullptr;
    return {data_->data(), data_->size()};
  }

  double operator[](std::size_t i) const { return (*data_)[i]; }
  double at(std::size_t i, std::size_t j) const {
    require_matrix("at");
    return (*data_)[i * shape_[1] + j];
  }

  double item() const {
    if (numel() != 1) throw DimensionError("item() on tensor of shape " + shape_str(shape_));
    return (*data_)[0];
  }

  bool is_scalar() const { return shape_.empty(); }
  bool tracked() const { return tape_ != nullptr; }
  bool requires_grad() const { return tracked(); }
  Tape* tape() const { return tape_; }
  std::size_t node() const { return node_; }

  /// Same values, no tape participation.
  Tensor detach() const {
    Tensor t = *this;
    t.tape_ = nullptr;
    t.node_ = 0;
    return t;
  }

  /// Untracked view under a new shape; see lrq::reshape for the tape-aware op.
  Tensor reshaped(Shape s) const {
    if (shape_numel(s) != numel()) {
      throw DimensionError("cannot reshape " + shape_str(shape_) + " to " + shape_str(s));
    }
    Tensor t = detach();
    t.shape_ = std::move(s);
    return t;
  }

  bool all_finite() const {
    for (double v : *data_)
      if (!std::isfinite(v)) return false;
    return true;
  }

  bool bitwise_equal(const Tensor& o) const {
    return shape_ == o.shape_ && *data_ == *o.data_;
  }

 private:
  friend class Tape;

  void require_matrix(const char* what) const {
    if (shape_.size() != 2) {
      throw DimensionError(std::string(what) + " requires a rank-2 tensor, got " +
                           shape_str(shape_));
    }
  }

  Shape shape_;
  std::shared_ptr<Buffer> data_;
  Tape* tape_ = nullptr;
  std::size_t node_ = 0;
};

}  // namespace lrq
