#include "distilshield/gate.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <string>

#include "distilshield/checkpoint.hpp"
#include "distilshield/errors.hpp"
#include "distilshield/quantile.hpp"
#include "distilshield/rng.hpp"

namespace distilshield::gate {

void UncertaintyGate::validate() const {
  if (class_prototypes.empty()) throw ConfigError("gate has no class prototypes");
  const std::size_t n = class_prototypes.front().size();
  for (const std::vector<double>& p : class_prototypes) {
    if (p.size() != n) throw ConfigError("gate prototypes differ in length");
    double sum = 0.0;
    for (const double v : p) sum += v;
    if (std::abs(sum - 1.0) > 1e-9) throw ConfigError("gate prototype does not sum to 1");
  }
  if (!(kl_cutoff >= 0.0)) throw ConfigError("kl_cutoff must be nonnegative");
  if (!(significance > 0.0 && significance < 1.0)) throw ConfigError("significance must be in (0,1)");
  if (!(dropout_rate >= 0.0 && dropout_rate < 1.0)) throw ConfigError("dropout_rate must be in [0,1)");
  if (mc_samples == 0) throw ConfigError("mc_samples must be positive");
}

double kl_divergence(std::span<const double> p, std::span<const double> q) {
  if (p.size() != q.size()) {
    throw ShapeError("kl_divergence: lengths " + std::to_string(p.size()) + " and " +
                     std::to_string(q.size()) + " differ");
  }
  double total = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    if (p[i] > 0.0) total += p[i] * std::log(p[i] / std::max(q[i], nn::kProbabilityFloor));
  }
  return std::max(total, 0.0);
}

McEstimate mc_dropout_predict(const nn::NetworkModel& model, std::span<const double> x,
                              double dropout_rate, std::size_t samples, std::uint64_t seed) {
  if (!(dropout_rate >= 0.0 && dropout_rate < 1.0)) {
    throw ParameterError("dropout_rate must be in [0, 1)");
  }
  if (samples == 0) throw ParameterError("mc_samples must be at least 1");
  if (!model.is_classifier()) throw ConfigError("MC dropout needs a classifier model");
  if (dropout_rate == 0.0) {
    std::vector<double> p = nn::forward(model, x, 1.0);
    return {std::move(p), std::vector<double>(model.output_classes, 0.0)};
  }
  Rng rng(seed);
  std::vector<std::vector<double>> draws;
  draws.reserve(samples);
  for (std::size_t s = 0; s < samples; ++s) {
    draws.push_back(nn::forward_with_dropout(model, x, 1.0, dropout_rate, rng));
  }
  const std::size_t n = model.output_classes;
  const double count = static_cast<double>(samples);
  McEstimate est{std::vector<double>(n, 0.0), std::vector<double>(n, 0.0)};
  for (const std::vector<double>& d : draws) {
    for (std::size_t i = 0; i < n; ++i) est.mean[i] += d[i];
  }
  for (double& m : est.mean) m /= count;
  for (const std::vector<double>& d : draws) {
    for (std::size_t i = 0; i < n; ++i) {
      const double diff = d[i] - est.mean[i];
      est.variance[i] += diff * diff;
    }
  }
  for (double& v : est.variance) v /= count;
  double total = 0.0;
  for (const double m : est.mean) total += m;
  for (double& m : est.mean) m /= total;
  return est;
}

double prototype_score(const UncertaintyGate& gate, std::span<const double> predictive) {
  double best = std::numeric_limits<double>::infinity();
  for (const std::vector<double>& proto : gate.class_prototypes) {
    best = std::min(best, kl_divergence(predictive, proto));
  }
  return best;
}

std::vector<double> calibration_scores(const nn::NetworkModel& student, const UncertaintyGate& gate,
                                       const data::Dataset& training) {
  std::vector<double> scores;
  scores.reserve(training.size());
  for (const Tensor& image : training.images) {
    const McEstimate est = mc_dropout_predict(student, image.values(), gate.dropout_rate,
                                              gate.mc_samples, derive_seed(gate.seed, image.values()));
    scores.push_back(prototype_score(gate, est.mean));
  }
  return scores;
}

UncertaintyGate calibrate_gate(const nn::NetworkModel& student, const data::Dataset& training,
                               double significance, double dropout_rate,
                               std::size_t mc_samples, std::uint64_t seed) {
  if (!(significance > 0.0 && significance < 1.0)) {
    throw ParameterError("significance must be in (0, 1)");
  }
  if (!(dropout_rate >= 0.0 && dropout_rate < 1.0)) {
    throw ParameterError("dropout_rate must be in [0, 1)");
  }
  if (mc_samples == 0) throw ParameterError("mc_samples must be at least 1");
  if (!student.is_classifier()) throw ConfigError("gate calibration needs a classifier");
  const std::size_t classes = student.output_classes;

  UncertaintyGate gate;
  gate.significance = significance;
  gate.dropout_rate = dropout_rate;
  gate.mc_samples = mc_samples;
  gate.seed = seed;
  gate.class_prototypes.assign(classes, std::vector<double>(classes, 0.0));
  std::vector<std::size_t> counts(classes, 0);
  for (std::size_t i = 0; i < training.size(); ++i) {
    const std::size_t label = training.labels[i];
    if (label >= classes) throw CalibrationError("training label outside the student's classes");
    const std::vector<double> p = nn::forward(student, training.images[i].values(), 1.0);
    for (std::size_t c = 0; c < classes; ++c) gate.class_prototypes[label][c] += p[c];
    ++counts[label];
  }
  for (std::size_t c = 0; c < classes; ++c) {
    if (counts[c] == 0) {
      throw CalibrationError("class " + std::to_string(c) + " has no calibration examples");
    }
    double total = 0.0;
    for (double& v : gate.class_prototypes[c]) total += (v /= static_cast<double>(counts[c]));
    for (double& v : gate.class_prototypes[c]) v /= total;
  }
  const std::vector<double> scores = calibration_scores(student, gate, training);
  gate.kl_cutoff = quantile_linear(scores, 1.0 - significance);
  gate.validate();
  return gate;
}

UncertaintyGate with_infinite_cutoff(UncertaintyGate gate) {
  gate.kl_cutoff = std::numeric_limits<double>::infinity();
  return gate;
}

GatedPrediction gated_predict(const nn::NetworkModel& student, const UncertaintyGate& gate,
                              std::span<const double> x) {
  McEstimate est = mc_dropout_predict(student, x, gate.dropout_rate, gate.mc_samples,
                                      derive_seed(gate.seed, x));
  GatedPrediction out;
  out.kl_score = prototype_score(gate, est.mean);
  // Dropout only informs the score; the verdict is the deterministic prediction.
  if (!(out.kl_score > gate.kl_cutoff)) out.verdict = argmax(nn::forward(student, x, 1.0));
  out.predictive_mean = std::move(est.mean);
  out.predictive_variance = std::move(est.variance);
  return out;
}

void save_gate(const std::filesystem::path& path, const UncertaintyGate& gate) {
  gate.validate();
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  out << "distilshield-gate 1\n"
      << "classes " << gate.class_prototypes.size() << '\n'
      << "kl_cutoff " << format_real(gate.kl_cutoff) << '\n'
      << "significance " << format_real(gate.significance) << '\n'
      << "dropout_rate " << format_real(gate.dropout_rate) << '\n'
      << "mc_samples " << gate.mc_samples << '\n'
      << "seed " << gate.seed << '\n';
  for (std::size_t c = 0; c < gate.class_prototypes.size(); ++c) {
    out << "prototype " << c;
    for (const double v : gate.class_prototypes[c]) out << ' ' << format_real(v);
    out << '\n';
  }
  if (!out) throw IoError("write failed for " + path.string());
}

UncertaintyGate load_gate(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  auto field = [&](const char* name) {
    std::string key, value;
    if (!(in >> key >> value) || key != name) {
      throw FormatError(path.string() + ": expected field '" + name + "'");
    }
    return value;
  };
  std::string magic, version;
  if (!(in >> magic >> version) || magic != "distilshield-gate" || version != "1") {
    throw FormatError(path.string() + ": not a gate file");
  }
  UncertaintyGate gate;
  const auto classes = static_cast<std::size_t>(std::stoull(field("classes")));
  gate.kl_cutoff = parse_real(field("kl_cutoff"));
  gate.significance = parse_real(field("significance"));
  gate.dropout_rate = parse_real(field("dropout_rate"));
  gate.mc_samples = static_cast<std::size_t>(std::stoull(field("mc_samples")));
  gate.seed = std::stoull(field("seed"));
  for (std::size_t c = 0; c < classes; ++c) {
    std::string key;
    std::size_t index = 0;
    if (!(in >> key >> index) || key != "prototype" || index != c) {
      throw FormatError(path.string() + ": bad prototype line");
    }
    std::vector<double> proto(classes);
    for (double& v : proto) {
      std::string token;
      if (!(in >> token)) throw FormatError(path.string() + ": truncated prototype");
      v = parse_real(token);
    }
    gate.class_prototypes.push_back(std::move(proto));
  }
  try {
    gate.validate();
  } catch (const ConfigError& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
  return gate;
}

}  // namespace distilshield::gate
