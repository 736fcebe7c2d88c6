#pragma once

// Defensive distillation: a teacher is trained on hard labels with a high
// softmax temperature, its softened outputs label the data for a student of
// the same shape, and both are queried at temperature 1.

#include <cstddef>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "distilshield/data_io.hpp"
#include "distilshield/nn.hpp"

namespace distilshield::distill {

struct DistillConfig {
  double train_temperature = 5.0;
  double test_temperature = 1.0;
  std::vector<std::size_t> hidden = {64, 32};  // shared by teacher and student
  nn::Activation hidden_activation = nn::Activation::relu;
  nn::TrainConfig teacher;
  nn::TrainConfig student;

  void validate() const;
};

/// input -> hidden... -> classes, identity logits.
std::vector<nn::LayerSpec> classifier_specs(std::size_t input_dim,
                                            std::span<const std::size_t> hidden,
                                            std::size_t classes,
                                            nn::Activation activation = nn::Activation::relu);

struct SoftLabeledDataset {
  std::vector<std::vector<double>> inputs;
  std::vector<std::vector<double>> soft_labels;
  std::string source;

  std::size_t size() const { return inputs.size(); }
  /// Each label must be a distribution (entries in [0,1], sum 1 +- 1e-9).
  void validate() const;
};

/// Cross entropy against one-hot labels at train_temperature.
nn::TrainResult train_teacher(const data::Dataset& dataset, const data::Dataset& validation,
                              const DistillConfig& config);

SoftLabeledDataset soft_labels(const nn::NetworkModel& teacher, const data::Dataset& dataset,
                               double temperature);

/// Cross entropy against the soft labels at train_temperature. `validation`
/// may be empty.
nn::TrainResult train_student(const SoftLabeledDataset& soft, const SoftLabeledDataset& validation,
                              const DistillConfig& config);

struct Prediction {
  std::size_t label = 0;
  std::vector<double> probabilities;
};

/// argmax of forward(model, x, temperature); ties go to the lowest index.
Prediction predict(const nn::NetworkModel& model, std::span<const double> x,
                   double temperature = 1.0);

double accuracy(const nn::NetworkModel& model, const data::Dataset& dataset,
                double temperature = 1.0);

/// CSV: id,p0,...,p{N-1}
void write_soft_labels(const std::filesystem::path& path, const SoftLabeledDataset& soft);

}  // namespace distilshield::distill
