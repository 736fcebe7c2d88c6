#include "distilshield/dae.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <string>

#include "distilshield/checkpoint.hpp"
#include "distilshield/errors.hpp"
#include "distilshield/quantile.hpp"
#include "distilshield/rng.hpp"

namespace distilshield::dae {

namespace {

nn::NetworkModel stack(const DaeModel& dae) {
  nn::NetworkModel combined;
  combined.layers = dae.encoder.layers;
  combined.layers.insert(combined.layers.end(), dae.decoder.layers.begin(),
                         dae.decoder.layers.end());
  return combined;
}

DaeModel unstack(const nn::NetworkModel& combined, std::size_t encoder_layers) {
  DaeModel out;
  const auto split_at = combined.layers.begin() + static_cast<std::ptrdiff_t>(encoder_layers);
  out.encoder.layers.assign(combined.layers.begin(), split_at);
  out.decoder.layers.assign(split_at, combined.layers.end());
  return out;
}

}  // namespace

void DaeModel::validate() const {
  encoder.validate();
  decoder.validate();
  if (encoder.is_classifier() || decoder.is_classifier()) {
    throw ConfigError("autoencoder halves must be regression heads");
  }
  if (encoder.output_dim() != decoder.input_dim()) {
    throw ConfigError("encoder latent size " + std::to_string(encoder.output_dim()) +
                      " does not match decoder input " + std::to_string(decoder.input_dim()));
  }
  if (decoder.output_dim() != encoder.input_dim()) {
    throw ConfigError("decoder output must match the encoder input size");
  }
  if (decoder.layers.back().spec.activation != nn::Activation::sigmoid) {
    throw ConfigError("decoder output layer must be sigmoid");
  }
}

DaeArchitecture DaeArchitecture::for_input(std::size_t input_dim) {
  DaeArchitecture arch;
  arch.input_dim = input_dim;
  arch.hidden_dim = std::max<std::size_t>(1, input_dim / 4);
  arch.latent_dim = std::max<std::size_t>(1, input_dim / 8);
  return arch;
}

DaeModel init_dae(const DaeArchitecture& arch, std::uint64_t seed) {
  const std::vector<nn::LayerSpec> encoder = {
      {arch.input_dim, arch.hidden_dim, arch.hidden_activation},
      {arch.hidden_dim, arch.latent_dim, arch.latent_activation}};
  const std::vector<nn::LayerSpec> decoder = {
      {arch.latent_dim, arch.hidden_dim, arch.hidden_activation},
      {arch.hidden_dim, arch.input_dim, nn::Activation::sigmoid}};
  DaeModel dae{nn::init_model(encoder, 0, derive_seed(seed, "encoder")),
               nn::init_model(decoder, 0, derive_seed(seed, "decoder"))};
  dae.validate();
  return dae;
}

std::vector<double> encode(const DaeModel& dae, std::span<const double> x) {
  return nn::forward(dae.encoder, x);
}

std::vector<double> decode(const DaeModel& dae, std::span<const double> h) {
  return nn::forward(dae.decoder, h);
}

std::vector<double> reconstruct(const DaeModel& dae, std::span<const double> x) {
  return decode(dae, encode(dae, x));
}

double reconstruction_error(const DaeModel& dae, std::span<const double> x) {
  return nn::loss_mse(x, reconstruct(dae, x));
}

std::vector<double> reconstruction_errors(const DaeModel& dae, const data::Dataset& dataset) {
  std::vector<double> errors;
  errors.reserve(dataset.size());
  for (const Tensor& image : dataset.images) errors.push_back(reconstruction_error(dae, image.values()));
  return errors;
}

std::string_view to_string(CorruptionMode mode) {
  switch (mode) {
    case CorruptionMode::noise: return "noise";
    case CorruptionMode::attack: return "attack";
    case CorruptionMode::mixed: return "mixed";
  }
  return "mixed";
}

CorruptionMode parse_corruption_mode(std::string_view name) {
  if (name == "noise") return CorruptionMode::noise;
  if (name == "attack") return CorruptionMode::attack;
  if (name == "mixed") return CorruptionMode::mixed;
  throw ConfigError("unknown corruption mode '" + std::string(name) + "'");
}

nn::TrainingSet corruption_pairs(const data::Dataset& clean, const CorruptionSpec& corruption) {
  const bool use_attack = corruption.mode != CorruptionMode::noise;
  const bool use_noise = corruption.mode != CorruptionMode::attack;
  if (use_attack && corruption.attack_model == nullptr) {
    throw ConfigError("attack corruption needs a model to craft adversarial inputs");
  }
  if (!(corruption.noise_sigma >= 0.0)) throw ParameterError("noise_sigma must be nonnegative");
  Rng rng(corruption.seed);
  std::normal_distribution<double> gauss(0.0, 1.0);
  nn::TrainingSet pairs;
  auto add = [&](std::vector<double> input, const std::vector<double>& target) {
    pairs.inputs.push_back(std::move(input));
    pairs.targets.push_back(target);
  };
  for (std::size_t i = 0; i < clean.size(); ++i) {
    const std::vector<double>& x = clean.images[i].data();
    if (corruption.include_identity) add(x, x);
    if (use_noise) {
      std::vector<double> noisy = x;
      for (double& v : noisy) v = std::clamp(v + corruption.noise_sigma * gauss(rng), 0.0, 1.0);
      add(std::move(noisy), x);
    }
    if (use_attack) {
      for (const attacks::AttackKind kind : corruption.attack_kinds) {
        add(attacks::attack(kind, *corruption.attack_model, x, clean.labels[i], corruption.attack), x);
      }
    }
  }
  return pairs;
}

TrainResult train_dae(DaeModel initial, const data::Dataset& clean,
                      const data::Dataset& validation, const nn::TrainConfig& config,
                      const CorruptionSpec& corruption) {
  initial.validate();
  if (clean.empty()) throw InputError("DAE training set is empty");
  if (clean.input_dim() != initial.input_dim()) {
    throw ShapeError("DAE input size does not match the dataset");
  }
  const nn::TrainingSet pairs = corruption_pairs(clean, corruption);
  nn::TrainingSet held_out;
  for (const Tensor& image : validation.images) {
    held_out.inputs.push_back(image.data());
    held_out.targets.push_back(image.data());
  }
  const std::size_t encoder_layers = initial.encoder.layers.size();
  nn::TrainResult trained =
      nn::train(stack(initial), pairs, held_out, config, nn::LossKind::mse);
  return {unstack(trained.model, encoder_layers), std::move(trained.history)};
}

Threshold initial_threshold(double value) {
  if (!(value >= 0.0)) throw ParameterError("threshold must be nonnegative");
  return {value, ThresholdMethod::initial, 0};
}

Threshold infer_threshold_from_scores(std::span<const double> scores, double target_fraction) {
  if (!(target_fraction > 0.0 && target_fraction < 1.0)) {
    throw ParameterError("target_fraction must be in (0, 1)");
  }
  if (scores.empty()) throw InputError("threshold reference batch is empty");
  return {quantile_linear(scores, 1.0 - target_fraction), ThresholdMethod::inferred,
          scores.size()};
}

Threshold infer_threshold(const DaeModel& dae, const data::Dataset& reference,
                          double target_fraction) {
  if (!(target_fraction > 0.0 && target_fraction < 1.0)) {
    throw ParameterError("target_fraction must be in (0, 1)");
  }
  if (reference.empty()) throw InputError("threshold reference batch is empty");
  return infer_threshold_from_scores(reconstruction_errors(dae, reference), target_fraction);
}

std::string_view to_string(PassMode mode) {
  return mode == PassMode::reconstructed ? "reconstructed" : "original";
}

PassMode parse_pass_mode(std::string_view name) {
  if (name == "reconstructed") return PassMode::reconstructed;
  if (name == "original") return PassMode::original;
  throw ConfigError("unknown pass mode '" + std::string(name) + "'");
}

FilterOutcome filter_dataset(const DaeModel& dae, const data::Dataset& dataset,
                             const Threshold& threshold, PassMode pass_mode) {
  if (!(threshold.value >= 0.0)) throw ParameterError("threshold must be nonnegative");
  FilterOutcome outcome;
  outcome.threshold = threshold.value;
  outcome.kept.class_count = dataset.class_count;
  outcome.per_example_error.reserve(dataset.size());
  for (std::size_t i = 0; i < dataset.size(); ++i) {
    const Tensor& image = dataset.images[i];
    std::vector<double> rebuilt = reconstruct(dae, image.values());
    const double error = nn::loss_mse(image.values(), rebuilt);
    outcome.per_example_error.push_back(error);
    if (error > threshold.value) {
      outcome.discarded_indices.push_back(i);
      continue;
    }
    outcome.kept_indices.push_back(i);
    outcome.kept.images.push_back(pass_mode == PassMode::reconstructed
                                      ? Tensor(image.shape(), std::move(rebuilt))
                                      : image);
    outcome.kept.labels.push_back(dataset.labels[i]);
  }
  return outcome;
}

void write_filter_outcome(const std::filesystem::path& path, const FilterOutcome& outcome) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  out << "index,error,flagged\n";
  for (std::size_t i = 0; i < outcome.per_example_error.size(); ++i) {
    const double e = outcome.per_example_error[i];
    out << i << ',' << format_real(e) << ',' << (e > outcome.threshold ? 1 : 0) << '\n';
  }
  if (!out) throw IoError("write failed for " + path.string());
}

void save_dae(const std::filesystem::path& path, const DaeModel& dae) {
  dae.validate();
  save_checkpoints(path, {{"encoder", 1.0, dae.encoder}, {"decoder", 1.0, dae.decoder}});
}

DaeModel load_dae(const std::filesystem::path& path) {
  const std::vector<Checkpoint> blocks = load_checkpoints(path);
  DaeModel dae;
  bool has_encoder = false;
  bool has_decoder = false;
  for (const Checkpoint& cp : blocks) {
    if (cp.role == "encoder") {
      dae.encoder = cp.model;
      has_encoder = true;
    } else if (cp.role == "decoder") {
      dae.decoder = cp.model;
      has_decoder = true;
    }
  }
  if (!has_encoder || !has_decoder) {
    throw FormatError(path.string() + ": DAE checkpoint needs encoder and decoder blocks");
  }
  try {
    dae.validate();
  } catch (const ConfigError& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
  return dae;
}

void save_threshold(const std::filesystem::path& path, const Threshold& threshold) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  out << "distilshield-threshold 1\n"
      << "value " << format_real(threshold.value) << '\n'
      << "method " << (threshold.method == ThresholdMethod::inferred ? "inferred" : "initial") << '\n'
      << "reference_size " << threshold.reference_size << '\n';
  if (!out) throw IoError("write failed for " + path.string());
}

Threshold load_threshold(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  std::string magic, version, key, value, method, size_key;
  Threshold t;
  if (!(in >> magic >> version) || magic != "distilshield-threshold" || version != "1") {
    throw FormatError(path.string() + ": not a threshold file");
  }
  if (!(in >> key >> value) || key != "value") throw FormatError(path.string() + ": missing value");
  t.value = parse_real(value);
  if (!(in >> key >> method) || key != "method" || (method != "inferred" && method != "initial")) {
    throw FormatError(path.string() + ": missing method");
  }
  t.method = method == "inferred" ? ThresholdMethod::inferred : ThresholdMethod::initial;
  if (!(in >> key >> t.reference_size) || key != "reference_size") {
    throw FormatError(path.string() + ": missing reference_size");
  }
  return t;
}

}  // namespace distilshield::dae
