#pragma once

#include <cstddef>
#include <span>

namespace distilshield {

/// q-quantile with linear interpolation between order statistics
/// (position q * (n - 1) in the sorted sample). q in [0, 1], sample nonempty.
double quantile_linear(std::span<const double> values, double q);

/// Number of values strictly greater than `cutoff`.
std::size_t count_above(std::span<const double> values, double cutoff);

}  // namespace distilshield
