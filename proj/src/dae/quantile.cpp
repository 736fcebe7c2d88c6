#include "distilshield/quantile.hpp"

#include <algorithm>
#include <cmath>
#include <vector>

#include "distilshield/errors.hpp"

namespace distilshield {

double quantile_linear(std::span<const double> values, double q) {
  if (values.empty()) throw InputError("quantile of an empty sample");
  if (!(q >= 0.0 && q <= 1.0)) throw ParameterError("quantile level must be in [0, 1]");
  std::vector<double> sorted(values.begin(), values.end());
  std::sort(sorted.begin(), sorted.end());
  const double position = q * static_cast<double>(sorted.size() - 1);
  const auto lower = static_cast<std::size_t>(std::floor(position));
  if (lower + 1 >= sorted.size()) return sorted.back();
  const double weight = position - static_cast<double>(lower);
  return sorted[lower] + weight * (sorted[lower + 1] - sorted[lower]);
}

std::size_t count_above(std::span<const double> values, double cutoff) {
  return static_cast<std::size_t>(
      std::count_if(values.begin(), values.end(), [&](double v) { return v > cutoff; }));
}

}  // namespace distilshield
