#include "distilshield/distill.hpp"

#include <cmath>
#include <fstream>
#include <numeric>
#include <string>

#include "distilshield/checkpoint.hpp"
#include "distilshield/errors.hpp"
#include "distilshield/rng.hpp"

namespace distilshield::distill {

void DistillConfig::validate() const {
  if (!(train_temperature > 0.0)) throw ParameterError("train_temperature must be positive");
  if (!(test_temperature > 0.0)) throw ParameterError("test_temperature must be positive");
  teacher.validate();
  student.validate();
}

std::vector<nn::LayerSpec> classifier_specs(std::size_t input_dim,
                                            std::span<const std::size_t> hidden,
                                            std::size_t classes, nn::Activation activation) {
  std::vector<nn::LayerSpec> specs;
  std::size_t in = input_dim;
  for (const std::size_t width : hidden) {
    specs.push_back({in, width, activation});
    in = width;
  }
  specs.push_back({in, classes, nn::Activation::identity});
  return specs;
}

void SoftLabeledDataset::validate() const {
  if (inputs.size() != soft_labels.size()) {
    throw ConsistencyError("soft-labelled set has mismatched input and label counts");
  }
  for (const std::vector<double>& p : soft_labels) {
    double sum = 0.0;
    for (const double v : p) {
      if (!(v >= 0.0 && v <= 1.0)) throw ParameterError("soft label entry outside [0,1]");
      sum += v;
    }
    if (std::abs(sum - 1.0) > 1e-9) throw ParameterError("soft label does not sum to 1");
  }
}

nn::TrainResult train_teacher(const data::Dataset& dataset, const data::Dataset& validation,
                              const DistillConfig& config) {
  config.validate();
  if (dataset.empty()) throw InputError("teacher training set is empty");
  nn::TrainConfig tc = config.teacher;
  tc.temperature = config.train_temperature;
  const nn::NetworkModel initial = nn::init_model(
      classifier_specs(dataset.input_dim(), config.hidden, dataset.class_count,
                       config.hidden_activation),
      dataset.class_count, derive_seed(tc.seed, "teacher-init"));
  return nn::train(initial, data::to_training_set(dataset), data::to_training_set(validation), tc,
                   nn::LossKind::cross_entropy);
}

SoftLabeledDataset soft_labels(const nn::NetworkModel& teacher, const data::Dataset& dataset,
                               double temperature) {
  if (!dataset.empty() && dataset.input_dim() != teacher.input_dim()) {
    throw ShapeError("teacher input size does not match the dataset");
  }
  SoftLabeledDataset out;
  out.source = "teacher@T=" + format_real(temperature);
  out.inputs.reserve(dataset.size());
  out.soft_labels.reserve(dataset.size());
  for (const Tensor& image : dataset.images) {
    out.inputs.push_back(image.data());
    out.soft_labels.push_back(nn::forward(teacher, image.values(), temperature));
  }
  return out;
}

nn::TrainResult train_student(const SoftLabeledDataset& soft, const SoftLabeledDataset& validation,
                              const DistillConfig& config) {
  config.validate();
  soft.validate();
  if (soft.size() == 0) throw InputError("student training set is empty");
  nn::TrainConfig sc = config.student;
  sc.temperature = config.train_temperature;
  const std::size_t classes = soft.soft_labels.front().size();
  const nn::NetworkModel initial = nn::init_model(
      classifier_specs(soft.inputs.front().size(), config.hidden, classes,
                       config.hidden_activation),
      classes, derive_seed(sc.seed, "student-init"));
  const nn::TrainingSet data{soft.inputs, soft.soft_labels};
  const nn::TrainingSet held_out{validation.inputs, validation.soft_labels};
  return nn::train(initial, data, held_out, sc, nn::LossKind::cross_entropy);
}

Prediction predict(const nn::NetworkModel& model, std::span<const double> x, double temperature) {
  if (!model.is_classifier()) throw ConfigError("predict needs a classifier model");
  Prediction p;
  p.probabilities = nn::forward(model, x, temperature);
  p.label = argmax(p.probabilities);
  return p;
}

double accuracy(const nn::NetworkModel& model, const data::Dataset& dataset, double temperature) {
  if (dataset.empty()) throw InputError("accuracy of an empty dataset");
  std::size_t correct = 0;
  for (std::size_t i = 0; i < dataset.size(); ++i) {
    if (predict(model, dataset.images[i].values(), temperature).label == dataset.labels[i]) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(dataset.size());
}

void write_soft_labels(const std::filesystem::path& path, const SoftLabeledDataset& soft) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  out << "id";
  const std::size_t classes = soft.soft_labels.empty() ? 0 : soft.soft_labels.front().size();
  for (std::size_t c = 0; c < classes; ++c) out << ",p" << c;
  out << '\n';
  for (std::size_t i = 0; i < soft.size(); ++i) {
    out << i;
    for (const double v : soft.soft_labels[i]) out << ',' << format_real(v);
    out << '\n';
  }
  if (!out) throw IoError("write failed for " + path.string());
}

}  // namespace distilshield::distill
