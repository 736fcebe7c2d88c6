#pragma once

// Dense feed-forward networks with a temperature softmax head, exact
// reverse-mode gradients and plain minibatch SGD.

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "distilshield/rng.hpp"
#include "distilshield/tensor.hpp"

namespace distilshield::nn {

enum class Activation { relu, sigmoid, identity };
enum class LossKind { cross_entropy, mse };

std::string_view to_string(Activation activation);
Activation parse_activation(std::string_view name);
std::string_view to_string(LossKind kind);

/// Floor applied to probabilities inside every logarithm.
inline constexpr double kProbabilityFloor = 1e-12;

struct LayerSpec {
  std::size_t in_dim = 1;
  std::size_t out_dim = 1;
  Activation activation = Activation::identity;

  bool operator==(const LayerSpec&) const = default;
};

struct DenseLayer {
  LayerSpec spec;
  std::vector<double> weights;  // out_dim x in_dim, row-major
  std::vector<double> bias;     // out_dim

  bool operator==(const DenseLayer&) const = default;
};

/// Ordered dense layers. With `output_classes > 0` the last layer's output is
/// treated as logits and passed through a temperature softmax; with 0 the
/// network is a regression head and its raw output is returned.
struct NetworkModel {
  std::vector<DenseLayer> layers;
  std::size_t output_classes = 0;

  std::size_t input_dim() const;
  std::size_t output_dim() const;
  bool is_classifier() const { return output_classes > 0; }
  std::vector<LayerSpec> specs() const;

  /// Throws ConfigError if layers do not chain or the head does not match
  /// `output_classes`.
  void validate() const;

  bool operator==(const NetworkModel&) const = default;
};

struct TrainConfig {
  double learning_rate = 0.05;
  std::size_t epochs = 10;
  std::size_t batch_size = 16;
  std::uint64_t seed = 0;
  double temperature = 1.0;

  void validate() const;
};

struct LayerGradient {
  std::vector<double> weights;
  std::vector<double> bias;
};

struct Gradients {
  std::vector<LayerGradient> layers;
  std::vector<double> input;  // dL/dx
  double loss = 0.0;
};

/// Scaled-uniform initialisation: weights ~ U(-sqrt(6/(in+out)), +sqrt(6/(in+out))),
/// biases zero.
NetworkModel init_model(std::span<const LayerSpec> specs, std::size_t classes,
                        std::uint64_t seed);

/// Stable softmax of z / temperature.
std::vector<double> softmax(std::span<const double> logits, double temperature);

/// Output of the last layer (logits for classifiers).
std::vector<double> logits(const NetworkModel& model, std::span<const double> x);

/// Probability vector F(X) for classifiers, raw output for regression heads.
std::vector<double> forward(const NetworkModel& model, std::span<const double> x,
                            double temperature = 1.0);
Tensor forward(const NetworkModel& model, const Tensor& x, double temperature = 1.0);

/// Forward pass with inverted dropout on every hidden layer's output: each
/// unit is zeroed with probability `rate`, survivors scaled by 1/(1-rate).
std::vector<double> forward_with_dropout(const NetworkModel& model,
                                         std::span<const double> x,
                                         double temperature, double rate, Rng& rng);

double loss_cross_entropy(std::span<const double> probs, std::span<const double> target);
double loss_mse(std::span<const double> x, std::span<const double> x_hat);
double loss(LossKind kind, std::span<const double> output, std::span<const double> target);

/// Loss of forward(model, x, temperature) against `target`.
double evaluate_loss(const NetworkModel& model, std::span<const double> x,
                     std::span<const double> target, double temperature, LossKind kind);

/// Exact gradients of the selected loss of forward(model, x, temperature).
Gradients backward(const NetworkModel& model, std::span<const double> x,
                   std::span<const double> target, double temperature, LossKind kind);

/// Gradient of the loss with respect to the input only.
std::vector<double> input_gradient(const NetworkModel& model, std::span<const double> x,
                                   std::span<const double> target, double temperature,
                                   LossKind kind);

/// w <- w - learning_rate * g for every weight and bias.
NetworkModel sgd_step(NetworkModel model, const Gradients& grads, double learning_rate);
void apply_sgd(NetworkModel& model, const Gradients& grads, double learning_rate);

/// Paired inputs and targets.
struct TrainingSet {
  std::vector<std::vector<double>> inputs;
  std::vector<std::vector<double>> targets;

  std::size_t size() const { return inputs.size(); }
  bool empty() const { return inputs.empty(); }
};

struct EpochLoss {
  std::size_t epoch = 0;
  double train_loss = 0.0;
  double val_loss = 0.0;  // NaN when no validation set was given
};

struct TrainResult {
  NetworkModel model;
  std::vector<EpochLoss> history;
};

/// Minibatch SGD over `config.epochs` epochs with a seeded shuffle per epoch.
/// train_loss is the mean per-example loss seen during the epoch; val_loss the
/// mean loss over `validation` after the epoch.
TrainResult train(NetworkModel model, const TrainingSet& data,
                  const TrainingSet& validation, const TrainConfig& config,
                  LossKind kind);

double mean_loss(const NetworkModel& model, const TrainingSet& data, double temperature,
                 LossKind kind);

}  // namespace distilshield::nn
