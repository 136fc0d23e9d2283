#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <initializer_list>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "prunelab/error.hpp"

namespace prunelab {

using Shape = std::vector<std::size_t>;

inline std::size_t shape_size(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1},
                         std::multiplies<>());
}

inline std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ',';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

/// Dense row-major tensor of doubles. A value type: copies are deep.
class Tensor {
 public:
  Tensor() : shape_{0} {}

  explicit Tensor(Shape shape, double fill = 0.0)
      : shape_(std::move(shape)), data_(shape_size(shape_), fill) {}

  Tensor(Shape shape, std::vector<double> data)
      : shape_(std::move(shape)), data_(std::move(data)) {
    if (shape_size(shape_) != data_.size()) {
      throw ShapeError("tensor: shape " + shape_str(shape_) + " holds " +
                       std::to_string(shape_size(shape_)) + " values, got " +
                       std::to_string(data_.size()));
    }
  }

  static Tensor scalar(double v) { return Tensor(Shape{}, std::vector<double>{v}); }

  static Tensor vector(std::initializer_list<double> values) {
    return Tensor(Shape{values.size()}, std::vector<double>(values));
  }

  static Tensor matrix(std::initializer_list<std::initializer_list<double>> rows) {
    std::size_t r = rows.size();
    std::size_t c = r ? rows.begin()->size() : 0;
    std::vector<double> data;
    data.reserve(r * c);
    for (const auto& row : rows) {
      if (row.size() != c) throw ShapeError("tensor: ragged matrix literal");
      data.insert(data.end(), row.begin(), row.end());
    }
    return Tensor(Shape{r, c}, std::move(data));
  }

  const Shape& shape() const noexcept { return shape_; }
  std::size_t rank() const noexcept { return shape_.size(); }
  std::size_t dim(std::size_t i) const { return shape_.at(i); }
  std::size_t size() const noexcept { return data_.size(); }

  std::span<double> data() noexcept { return data_; }
  std::span<const double> data() const noexcept { return data_; }
  const std::vector<double>& values() const noexcept { return data_; }

  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }

  double item() const {
    if (data_.size() != 1) {
      throw ShapeError("tensor: item() on shape " + shape_str(shape_));
    }
    return data_[0];
  }

  Tensor reshaped(Shape shape) const {
    if (shape_size(shape) != data_.size()) {
      throw ShapeError("tensor: cannot reshape " + shape_str(shape_) + " to " +
                       shape_str(shape));
    }
    return Tensor(std::move(shape), data_);
  }

  /// Rows [begin, end) along the leading axis.
  Tensor slice_rows(std::size_t begin, std::size_t end) const {
    if (rank() == 0 || begin > end || end > shape_[0]) {
      throw ShapeError("tensor: bad row slice of " + shape_str(shape_));
    }
    std::size_t row = shape_[0] ? data_.size() / shape_[0] : 0;
    Shape s = shape_;
    s[0] = end - begin;
    return Tensor(std::move(s),
                  std::vector<double>(data_.begin() + begin * row,
                                      data_.begin() + end * row));
  }

  /// Gather rows of the leading axis.
  Tensor take_rows(std::span<const std::size_t> rows) const {
    std::size_t row = shape_[0] ? data_.size() / shape_[0] : 0;
    Shape s = shape_;
    s[0] = rows.size();
    std::vector<double> out;
    out.reserve(rows.size() * row);
    for (std::size_t r : rows) {
      if (r >= shape_[0]) throw ShapeError("tensor: row index out of range");
      out.insert(out.end(), data_.begin() + r * row, data_.begin() + (r + 1) * row);
    }
    return Tensor(std::move(s), std::move(out));
  }

  bool all_finite() const {
    return std::all_of(data_.begin(), data_.end(),
                       [](double v) { return std::isfinite(v); });
  }

  void fill(double v) { std::fill(data_.begin(), data_.end(), v); }

  friend bool operator==(const Tensor& a, const Tensor& b) {
    return a.shape_ == b.shape_ && a.data_ == b.data_;
  }

 private:
  Shape shape_;
  std::vector<double> data_;
};

}  // namespace prunelab
