#pragma once

// Central finite-difference verification of nn::backward. The numerical side
// evaluates the loss with its own straightforward loops, so it never shares
// code with the analytic path it checks.

#include <cstddef>
#include <cstdint>
#include <span>

#include "distilshield/nn.hpp"

namespace distilshield::gradcheck {

/// Denominator floor for relative errors of near-zero gradients.
inline constexpr double kRelativeFloor = 1e-6;

double relative_error(double analytic, double numeric);

struct Result {
  double max_relative_error = 0.0;
  std::size_t checked = 0;
  // Coordinates whose +-h probe crossed a relu kink, where the loss is not
  // differentiable and central differences are meaningless.
  std::size_t skipped = 0;

  bool passed(double tolerance) const { return max_relative_error < tolerance; }
  void merge(const Result& other);
};

/// Loss evaluated with naive loops, independent of the kernel layer.
double reference_loss(const nn::NetworkModel& model, std::span<const double> x,
                      std::span<const double> target, double temperature,
                      nn::LossKind kind);

/// Compares every weight, bias and input partial derivative.
Result check(const nn::NetworkModel& model, std::span<const double> x,
             std::span<const double> target, double temperature, nn::LossKind kind,
             double step = 1e-5);

struct SuiteConfig {
  std::size_t trials = 100;
  std::size_t max_dim = 16;
  std::uint64_t seed = 1;
  double step = 1e-5;
};

/// Random models with dims <= max_dim, mixed activations, both losses and
/// temperatures {1, 5}.
Result random_suite(const SuiteConfig& config);

}  // namespace distilshield::gradcheck
