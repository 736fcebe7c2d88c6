#pragma once

// Inference-time abstention. An input is compared with the training data by
// the KL divergence between the student's Monte-Carlo-dropout predictive mean
// and the closest per-class prototype distribution; scores above a cutoff
// calibrated at a chosen significance level yield a null verdict.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <vector>

#include "distilshield/data_io.hpp"
#include "distilshield/nn.hpp"

namespace distilshield::gate {

struct UncertaintyGate {
  std::vector<std::vector<double>> class_prototypes;  // mean softmax per class
  double kl_cutoff = 0.0;
  double significance = 0.05;
  double dropout_rate = 0.2;
  std::size_t mc_samples = 20;
  std::uint64_t seed = 0;

  void validate() const;
};

struct GatedPrediction {
  std::optional<std::size_t> verdict;  // nullopt is the null verdict
  double kl_score = 0.0;
  std::vector<double> predictive_mean;
  std::vector<double> predictive_variance;
};

/// sum_i p_i ln(p_i / max(q_i, 1e-12)) with 0 ln 0 = 0, clamped at 0.
double kl_divergence(std::span<const double> p, std::span<const double> q);

struct McEstimate {
  std::vector<double> mean;      // renormalised to sum 1
  std::vector<double> variance;  // population variance per class
};

/// `samples` stochastic passes at temperature 1. rate == 0 returns the
/// deterministic forward pass with zero variance.
McEstimate mc_dropout_predict(const nn::NetworkModel& model, std::span<const double> x,
                              double dropout_rate, std::size_t samples, std::uint64_t seed);

/// min over classes of KL(predictive, prototype).
double prototype_score(const UncertaintyGate& gate, std::span<const double> predictive);

/// Prototypes are per-class means of forward(student, x, 1). Calibration
/// scores use the same per-input dropout streams as gated_predict, so the
/// rejection rate on the calibration set is exactly the quantile's.
UncertaintyGate calibrate_gate(const nn::NetworkModel& student, const data::Dataset& training,
                               double significance, double dropout_rate,
                               std::size_t mc_samples, std::uint64_t seed);

/// Scores that calibrate_gate computed for each training example.
std::vector<double> calibration_scores(const nn::NetworkModel& student, const UncertaintyGate& gate,
                                       const data::Dataset& training);

/// Gate that never abstains.
UncertaintyGate with_infinite_cutoff(UncertaintyGate gate);

GatedPrediction gated_predict(const nn::NetworkModel& student, const UncertaintyGate& gate,
                              std::span<const double> x);

void save_gate(const std::filesystem::path& path, const UncertaintyGate& gate);
UncertaintyGate load_gate(const std::filesystem::path& path);

}  // namespace distilshield::gate
