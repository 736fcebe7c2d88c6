#pragma once

#include <cstddef>
#include <span>
#include <vector>

namespace distilshield {

/// Dense row-major array of doubles. Every value is finite.
class Tensor {
 public:
  Tensor() = default;

  /// Zero-filled tensor of the given shape.
  explicit Tensor(std::vector<std::size_t> shape);

  /// Throws ShapeError if the product of `shape` differs from `data.size()`
  /// and NumericError if any value is not finite.
  Tensor(std::vector<std::size_t> shape, std::vector<double> data);

  /// One-dimensional tensor.
  static Tensor vector(std::vector<double> values);

  const std::vector<std::size_t>& shape() const { return shape_; }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  std::span<const double> values() const { return data_; }
  std::span<double> values() { return data_; }
  const std::vector<double>& data() const { return data_; }

  double operator[](std::size_t i) const { return data_[i]; }
  double& operator[](std::size_t i) { return data_[i]; }

  bool operator==(const Tensor&) const = default;

 private:
  std::vector<std::size_t> shape_;
  std::vector<double> data_;
};

/// Throws NumericError naming `what` if any value is NaN or infinite.
void require_finite(std::span<const double> values, const char* what);

/// max_i |a_i - b_i|
double max_abs_difference(std::span<const double> a, std::span<const double> b);

/// Shannon entropy in nats, with 0 ln 0 = 0.
double entropy(std::span<const double> p);

/// Index of the largest element; ties resolve to the lowest index.
std::size_t argmax(std::span<const double> values);

}  // namespace distilshield
