#include "distilshield/attacks.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <string>

#include "distilshield/checkpoint.hpp"
#include "distilshield/errors.hpp"
#include "distilshield/rng.hpp"

namespace distilshield::attacks {

namespace {

double sign(double v) { return v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0); }

// Projects v into [origin - radius, origin + radius] such that the computed
// difference v - origin also satisfies the bound after rounding.
double project(double v, double origin, double radius) {
  if (v - origin > radius) {
    v = origin + radius;
    while (v - origin > radius) v = std::nextafter(v, origin);
  } else if (origin - v > radius) {
    v = origin - radius;
    while (origin - v > radius) v = std::nextafter(v, origin);
  }
  return v;
}

std::vector<double> signed_step(const nn::NetworkModel& model, std::span<const double> origin,
                                std::span<const double> current, std::size_t label,
                                double step, double radius, const AttackParams& params,
                                double temperature) {
  const std::vector<double> target = data::one_hot(label, model.output_classes);
  const std::vector<double> grad =
      nn::input_gradient(model, current, target, temperature, nn::LossKind::cross_entropy);
  std::vector<double> next(current.size());
  for (std::size_t i = 0; i < current.size(); ++i) {
    const double moved = std::clamp(current[i] + step * sign(grad[i]), params.clip_min,
                                    params.clip_max);
    next[i] = project(moved, origin[i], radius);
  }
  return next;
}

void check_input(const nn::NetworkModel& model, std::span<const double> x, std::size_t label,
                 const AttackParams& params) {
  params.validate();
  if (!model.is_classifier()) throw ConfigError("attacks need a classifier model");
  if (label >= model.output_classes) throw ParameterError("attack label out of range");
  for (const double v : x) {
    if (!(v >= params.clip_min && v <= params.clip_max)) {
      throw ParameterError("attack input outside [clip_min, clip_max]");
    }
  }
}

}  // namespace

std::string_view to_string(AttackKind kind) { return kind == AttackKind::fgsm ? "fgsm" : "ifgsm"; }

AttackKind parse_attack_kind(std::string_view name) {
  if (name == "fgsm") return AttackKind::fgsm;
  if (name == "ifgsm") return AttackKind::ifgsm;
  throw ConfigError("unknown attack kind '" + std::string(name) + "'");
}

std::string_view to_string(ProjectionMode mode) {
  return mode == ProjectionMode::ball ? "ball" : "cumulative";
}

ProjectionMode parse_projection_mode(std::string_view name) {
  if (name == "ball") return ProjectionMode::ball;
  if (name == "cumulative") return ProjectionMode::cumulative;
  throw ConfigError("unknown projection mode '" + std::string(name) + "'");
}

void AttackParams::validate() const {
  if (!(epsilon >= 0.0) || !std::isfinite(epsilon)) throw ParameterError("epsilon must be >= 0");
  if (!(alpha > 0.0) || !std::isfinite(alpha)) throw ParameterError("alpha must be positive");
  if (num_iterations == 0) throw ParameterError("num_iterations must be >= 1");
  if (!(clip_min < clip_max)) throw ParameterError("clip_min must be below clip_max");
}

std::vector<double> fgsm(const nn::NetworkModel& model, std::span<const double> x,
                         std::size_t label, const AttackParams& params, double temperature) {
  check_input(model, x, label, params);
  if (params.epsilon == 0.0) return {x.begin(), x.end()};
  return signed_step(model, x, x, label, params.epsilon, params.epsilon, params, temperature);
}

std::vector<double> ifgsm(const nn::NetworkModel& model, std::span<const double> x,
                          std::size_t label, const AttackParams& params, double temperature) {
  check_input(model, x, label, params);
  const bool ball = params.projection == ProjectionMode::ball;
  if (ball && params.epsilon == 0.0) return {x.begin(), x.end()};
  std::vector<double> current(x.begin(), x.end());
  for (std::size_t k = 0; k < params.num_iterations; ++k) {
    // Cumulative mode: the radius alpha*(k+1) is never binding in exact
    // arithmetic; it only pins the rounded bound.
    const double radius = ball ? params.epsilon : params.alpha * static_cast<double>(k + 1);
    current = signed_step(model, x, current, label, params.alpha, radius, params, temperature);
  }
  return current;
}

std::vector<double> attack(AttackKind kind, const nn::NetworkModel& model,
                           std::span<const double> x, std::size_t label,
                           const AttackParams& params, double temperature) {
  return kind == AttackKind::fgsm ? fgsm(model, x, label, params, temperature)
                                  : ifgsm(model, x, label, params, temperature);
}

data::Dataset attack_all(AttackKind kind, const nn::NetworkModel& model,
                         const data::Dataset& dataset, const AttackParams& params,
                         double temperature) {
  data::Dataset out = dataset;
  for (std::size_t i = 0; i < out.size(); ++i) {
    out.images[i] = Tensor(dataset.images[i].shape(),
                           attack(kind, model, dataset.images[i].values(), dataset.labels[i],
                                  params, temperature));
  }
  return out;
}

std::pair<data::Dataset, PoisonReport> poison_dataset(const data::Dataset& dataset,
                                                      const nn::NetworkModel& model,
                                                      const AttackParams& params,
                                                      double fraction, AttackKind kind,
                                                      std::uint64_t seed) {
  if (!(fraction >= 0.0 && fraction <= 1.0)) {
    throw ParameterError("poison fraction must be in [0, 1]");
  }
  params.validate();
  if (!dataset.empty() && dataset.input_dim() != model.input_dim()) {
    throw ShapeError("poisoning model input does not match the dataset");
  }
  const auto count = static_cast<std::size_t>(
      std::floor(fraction * static_cast<double>(dataset.size()) + 1e-9));
  std::vector<std::size_t> order(dataset.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  Rng rng(seed);
  std::shuffle(order.begin(), order.end(), rng);
  std::vector<std::size_t> chosen(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(count));
  std::sort(chosen.begin(), chosen.end());

  data::Dataset poisoned = dataset;
  PoisonReport report;
  report.poisoned_indices = chosen;
  double total = 0.0;
  for (const std::size_t i : chosen) {
    std::vector<double> adv =
        attack(kind, model, dataset.images[i].values(), dataset.labels[i], params);
    const double linf = max_abs_difference(adv, dataset.images[i].values());
    poisoned.images[i] = Tensor(dataset.images[i].shape(), std::move(adv));
    report.kinds.push_back(kind);
    report.linf.push_back(linf);
    total += linf;
  }
  report.mean_linf = chosen.empty() ? 0.0 : total / static_cast<double>(chosen.size());
  return {std::move(poisoned), std::move(report)};
}

void write_poison_report(const std::filesystem::path& path, const PoisonReport& report) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  out << "index,attack,linf\n";
  for (std::size_t k = 0; k < report.poisoned_indices.size(); ++k) {
    out << report.poisoned_indices[k] << ',' << to_string(report.kinds[k]) << ','
        << format_real(report.linf[k]) << '\n';
  }
  if (!out) throw IoError("write failed for " + path.string());
}

}  // namespace distilshield::attacks
