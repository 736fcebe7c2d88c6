#include "distilshield/tensor.hpp"

#include <bit>
#include <cmath>
#include <functional>
#include <numeric>
#include <string>

#include "distilshield/errors.hpp"
#include "distilshield/rng.hpp"

namespace distilshield {

namespace {

std::size_t element_count(const std::vector<std::size_t>& shape) {
  for (const std::size_t d : shape) {
    if (d == 0) throw ShapeError("tensor dimensions must be positive");
  }
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1},
                         std::multiplies<>());
}

}  // namespace

Tensor::Tensor(std::vector<std::size_t> shape)
    : shape_(std::move(shape)), data_(element_count(shape_), 0.0) {}

Tensor::Tensor(std::vector<std::size_t> shape, std::vector<double> data)
    : shape_(std::move(shape)), data_(std::move(data)) {
  if (element_count(shape_) != data_.size()) {
    throw ShapeError("tensor shape holds " + std::to_string(element_count(shape_)) +
                     " elements but " + std::to_string(data_.size()) +
                     " values were given");
  }
  require_finite(data_, "tensor");
}

Tensor Tensor::vector(std::vector<double> values) {
  const std::size_t n = values.size();
  return Tensor({n}, std::move(values));
}

void require_finite(std::span<const double> values, const char* what) {
  for (const double v : values) {
    if (!std::isfinite(v)) throw NumericError(std::string(what) + ": non-finite value");
  }
}

double max_abs_difference(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw ShapeError("max_abs_difference: length mismatch");
  double worst = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) worst = std::max(worst, std::abs(a[i] - b[i]));
  return worst;
}

double entropy(std::span<const double> p) {
  double h = 0.0;
  for (const double v : p) {
    if (v > 0.0) h -= v * std::log(v);
  }
  return h;
}

std::size_t argmax(std::span<const double> values) {
  if (values.empty()) throw ShapeError("argmax of an empty vector");
  std::size_t best = 0;
  for (std::size_t i = 1; i < values.size(); ++i) {
    if (values[i] > values[best]) best = i;
  }
  return best;
}

std::uint64_t derive_seed(std::uint64_t seed, std::span<const double> values) {
  std::uint64_t h = mix64(seed);
  for (const double v : values) h = mix64(h ^ std::bit_cast<std::uint64_t>(v));
  return h;
}

}  // namespace distilshield
