#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string_view>
#include <utility>
#include <vector>

#include "distilshield/data_io.hpp"
#include "distilshield/nn.hpp"

namespace distilshield::attacks {

/// How I-FGSM iterates are constrained. `ball` projects every iterate into the
/// L-infinity epsilon-ball around the clean input; `cumulative` only clips to
/// the data range, so perturbations can grow to alpha * num_iterations.
enum class ProjectionMode { ball, cumulative };

enum class AttackKind { fgsm, ifgsm };

std::string_view to_string(AttackKind kind);
AttackKind parse_attack_kind(std::string_view name);
std::string_view to_string(ProjectionMode mode);
ProjectionMode parse_projection_mode(std::string_view name);

/// Defaults: epsilon = alpha = 0.01, 10 iterations.
struct AttackParams {
  double epsilon = 0.01;
  double alpha = 0.01;
  std::size_t num_iterations = 10;
  double clip_min = 0.0;
  double clip_max = 1.0;
  ProjectionMode projection = ProjectionMode::cumulative;

  void validate() const;
};

/// Single signed-gradient step of size epsilon. The gradient is that of the
/// cross entropy against the true label at `temperature`; sign(0) = 0.
std::vector<double> fgsm(const nn::NetworkModel& model, std::span<const double> x,
                         std::size_t label, const AttackParams& params,
                         double temperature = 1.0);

/// num_iterations signed-gradient steps of size alpha.
std::vector<double> ifgsm(const nn::NetworkModel& model, std::span<const double> x,
                          std::size_t label, const AttackParams& params,
                          double temperature = 1.0);

std::vector<double> attack(AttackKind kind, const nn::NetworkModel& model,
                           std::span<const double> x, std::size_t label,
                           const AttackParams& params, double temperature = 1.0);

/// Copy of `dataset` with every image attacked (labels unchanged).
data::Dataset attack_all(AttackKind kind, const nn::NetworkModel& model,
                         const data::Dataset& dataset, const AttackParams& params,
                         double temperature = 1.0);

struct PoisonReport {
  std::vector<std::size_t> poisoned_indices;  // ascending
  std::vector<AttackKind> kinds;              // parallel to poisoned_indices
  std::vector<double> linf;                   // per poisoned example
  double mean_linf = 0.0;
};

/// Replaces floor(fraction * N) seeded-uniformly chosen examples by their
/// adversarial versions, keeping labels.
std::pair<data::Dataset, PoisonReport> poison_dataset(const data::Dataset& dataset,
                                                      const nn::NetworkModel& model,
                                                      const AttackParams& params,
                                                      double fraction, AttackKind kind,
                                                      std::uint64_t seed);

/// CSV: index,attack,linf
void write_poison_report(const std::filesystem::path& path, const PoisonReport& report);

}  // namespace distilshield::attacks
