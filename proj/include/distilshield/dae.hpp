#pragma once

// Denoising autoencoder used as a training-data filter. The encoder computes
// the latent code h = f(Wx + b) layer by layer; the decoder maps h back to
// pixel space through a sigmoid output layer. Inputs whose reconstruction
// error exceeds a threshold inferred from a reference batch are treated as
// adversarial and dropped; the rest are replaced by their reconstructions.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string_view>
#include <vector>

#include "distilshield/attacks.hpp"
#include "distilshield/data_io.hpp"
#include "distilshield/nn.hpp"

namespace distilshield::dae {

struct DaeModel {
  nn::NetworkModel encoder;  // input_dim -> latent_dim
  nn::NetworkModel decoder;  // latent_dim -> input_dim, sigmoid output

  std::size_t input_dim() const { return encoder.input_dim(); }
  std::size_t latent_dim() const { return encoder.output_dim(); }

  /// Throws ConfigError if the halves do not fit together.
  void validate() const;

  bool operator==(const DaeModel&) const = default;
};

/// Symmetric architecture input -> hidden -> latent -> hidden -> input.
struct DaeArchitecture {
  std::size_t input_dim = 256;
  std::size_t hidden_dim = 64;
  std::size_t latent_dim = 32;
  nn::Activation hidden_activation = nn::Activation::relu;
  nn::Activation latent_activation = nn::Activation::relu;

  /// hidden = input / 4, latent = input / 8 (at least 1 each).
  static DaeArchitecture for_input(std::size_t input_dim);
};

DaeModel init_dae(const DaeArchitecture& arch, std::uint64_t seed);

std::vector<double> encode(const DaeModel& dae, std::span<const double> x);
std::vector<double> decode(const DaeModel& dae, std::span<const double> h);
std::vector<double> reconstruct(const DaeModel& dae, std::span<const double> x);

/// Mean over pixels of (x - decode(encode(x)))^2.
double reconstruction_error(const DaeModel& dae, std::span<const double> x);
std::vector<double> reconstruction_errors(const DaeModel& dae, const data::Dataset& dataset);

enum class CorruptionMode {
  noise,   // Gaussian noise clipped to [0, 1]
  attack,  // adversarial copies crafted against `attack_model`
  mixed,   // both
};

std::string_view to_string(CorruptionMode mode);
CorruptionMode parse_corruption_mode(std::string_view name);

/// How corrupted inputs x* are produced from clean x during DAE training.
struct CorruptionSpec {
  CorruptionMode mode = CorruptionMode::mixed;
  double noise_sigma = 0.05;
  attacks::AttackParams attack;
  std::vector<attacks::AttackKind> attack_kinds = {attacks::AttackKind::fgsm,
                                                   attacks::AttackKind::ifgsm};
  const nn::NetworkModel* attack_model = nullptr;  // required unless mode == noise
  bool include_identity = true;                    // also learn (x, x)
  std::uint64_t seed = 0;
};

/// Builds the (x*, x) training pairs described by `corruption`.
nn::TrainingSet corruption_pairs(const data::Dataset& clean, const CorruptionSpec& corruption);

struct TrainResult {
  DaeModel model;
  std::vector<nn::EpochLoss> history;  // validation = clean reconstruction loss
};

TrainResult train_dae(DaeModel initial, const data::Dataset& clean,
                      const data::Dataset& validation, const nn::TrainConfig& config,
                      const CorruptionSpec& corruption);

enum class ThresholdMethod { initial, inferred };

struct Threshold {
  double value = 0.015;
  ThresholdMethod method = ThresholdMethod::initial;
  std::size_t reference_size = 0;
};

/// Fixed starting threshold, used only for pre-calibration reporting.
inline constexpr double kInitialThreshold = 0.015;
Threshold initial_threshold(double value = kInitialThreshold);

/// (1 - target_fraction)-quantile of `scores`, so that about target_fraction
/// of them lie strictly above it.
Threshold infer_threshold_from_scores(std::span<const double> scores, double target_fraction);

Threshold infer_threshold(const DaeModel& dae, const data::Dataset& reference,
                          double target_fraction);

enum class PassMode { reconstructed, original };

std::string_view to_string(PassMode mode);
PassMode parse_pass_mode(std::string_view name);

struct FilterOutcome {
  data::Dataset kept;
  std::vector<std::size_t> kept_indices;
  std::vector<std::size_t> discarded_indices;
  std::vector<double> per_example_error;  // one per input example
  double threshold = 0.0;
};

/// Drops examples with error > threshold; survivors are reconstructions
/// (PassMode::reconstructed) or the untouched inputs.
FilterOutcome filter_dataset(const DaeModel& dae, const data::Dataset& dataset,
                             const Threshold& threshold,
                             PassMode pass_mode = PassMode::reconstructed);

/// CSV: index,error,flagged
void write_filter_outcome(const std::filesystem::path& path, const FilterOutcome& outcome);

void save_dae(const std::filesystem::path& path, const DaeModel& dae);
DaeModel load_dae(const std::filesystem::path& path);

void save_threshold(const std::filesystem::path& path, const Threshold& threshold);
Threshold load_threshold(const std::filesystem::path& path);

}  // namespace distilshield::dae
