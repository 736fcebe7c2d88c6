#include "distilshield/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <vector>

#include "distilshield/errors.hpp"
#include "distilshield/rng.hpp"

namespace distilshield::gradcheck {

namespace {

struct Probe {
  double loss = 0.0;
  std::vector<char> relu_pattern;
};

Probe probe(const nn::NetworkModel& model, std::span<const double> x,
            std::span<const double> target, double temperature, nn::LossKind kind) {
  Probe result;
  std::vector<double> h(x.begin(), x.end());
  for (const nn::DenseLayer& layer : model.layers) {
    const std::size_t in = layer.spec.in_dim;
    std::vector<double> next(layer.spec.out_dim);
    for (std::size_t r = 0; r < layer.spec.out_dim; ++r) {
      double a = layer.bias[r];
      for (std::size_t c = 0; c < in; ++c) a += layer.weights[r * in + c] * h[c];
      switch (layer.spec.activation) {
        case nn::Activation::relu:
          result.relu_pattern.push_back(a > 0.0 ? 1 : 0);
          next[r] = a > 0.0 ? a : 0.0;
          break;
        case nn::Activation::sigmoid: next[r] = 1.0 / (1.0 + std::exp(-a)); break;
        case nn::Activation::identity: next[r] = a; break;
      }
    }
    h = std::move(next);
  }
  if (model.output_classes > 0) {
    double top = h[0];
    for (const double v : h) top = std::max(top, v);
    double total = 0.0;
    for (double& v : h) {
      v = std::exp((v - top) / temperature);
      total += v;
    }
    for (double& v : h) v /= total;
  }
  if (target.size() != h.size()) throw ShapeError("gradcheck: target length mismatch");
  double loss = 0.0;
  if (kind == nn::LossKind::cross_entropy) {
    for (std::size_t i = 0; i < h.size(); ++i) {
      if (target[i] != 0.0) loss -= target[i] * std::log(std::max(h[i], nn::kProbabilityFloor));
    }
  } else {
    for (std::size_t i = 0; i < h.size(); ++i) loss += (h[i] - target[i]) * (h[i] - target[i]);
    loss /= static_cast<double>(h.size());
  }
  result.loss = loss;
  return result;
}

}  // namespace

double relative_error(double analytic, double numeric) {
  const double scale = std::max({std::abs(analytic), std::abs(numeric), kRelativeFloor});
  return std::abs(analytic - numeric) / scale;
}

void Result::merge(const Result& other) {
  max_relative_error = std::max(max_relative_error, other.max_relative_error);
  checked += other.checked;
  skipped += other.skipped;
}

double reference_loss(const nn::NetworkModel& model, std::span<const double> x,
                      std::span<const double> target, double temperature,
                      nn::LossKind kind) {
  return probe(model, x, target, temperature, kind).loss;
}

Result check(const nn::NetworkModel& model, std::span<const double> x,
             std::span<const double> target, double temperature, nn::LossKind kind,
             double step) {
  const nn::Gradients grads = nn::backward(model, x, target, temperature, kind);
  const std::vector<char> base = probe(model, x, target, temperature, kind).relu_pattern;
  Result result;

  // Central difference of the loss along one coordinate reached through `slot`.
  auto compare = [&](double& slot, double analytic, const nn::NetworkModel& m,
                     std::span<const double> input) {
    const double saved = slot;
    slot = saved + step;
    const Probe plus = probe(m, input, target, temperature, kind);
    slot = saved - step;
    const Probe minus = probe(m, input, target, temperature, kind);
    slot = saved;
    if (plus.relu_pattern != base || minus.relu_pattern != base) {
      ++result.skipped;
      return;
    }
    const double numeric = (plus.loss - minus.loss) / (2.0 * step);
    result.max_relative_error =
        std::max(result.max_relative_error, relative_error(analytic, numeric));
    ++result.checked;
  };

  nn::NetworkModel scratch = model;
  for (std::size_t k = 0; k < scratch.layers.size(); ++k) {
    nn::DenseLayer& layer = scratch.layers[k];
    for (std::size_t i = 0; i < layer.weights.size(); ++i) {
      compare(layer.weights[i], grads.layers[k].weights[i], scratch, x);
    }
    for (std::size_t i = 0; i < layer.bias.size(); ++i) {
      compare(layer.bias[i], grads.layers[k].bias[i], scratch, x);
    }
  }
  std::vector<double> input(x.begin(), x.end());
  for (std::size_t i = 0; i < input.size(); ++i) compare(input[i], grads.input[i], model, input);
  return result;
}

Result random_suite(const SuiteConfig& config) {
  Rng rng(config.seed);
  std::uniform_int_distribution<std::size_t> dim(1, config.max_dim);
  std::uniform_int_distribution<std::size_t> depth(1, 3);
  std::uniform_int_distribution<int> activation(0, 2);
  std::normal_distribution<double> gauss(0.0, 1.0);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  const nn::Activation activations[] = {nn::Activation::relu, nn::Activation::sigmoid,
                                        nn::Activation::identity};

  Result total;
  for (std::size_t trial = 0; trial < config.trials; ++trial) {
    const nn::LossKind kind = trial % 2 == 0 ? nn::LossKind::cross_entropy : nn::LossKind::mse;
    const double temperature = (trial / 2) % 2 == 0 ? 1.0 : 5.0;
    const bool classifier = kind == nn::LossKind::cross_entropy || (trial / 4) % 2 == 0;

    std::vector<nn::LayerSpec> specs;
    std::size_t in = dim(rng);
    const std::size_t layers = depth(rng);
    for (std::size_t k = 0; k < layers; ++k) {
      std::size_t out = dim(rng);
      if (k + 1 == layers && classifier) out = std::max<std::size_t>(out, 2);
      specs.push_back({in, out, activations[activation(rng)]});
      in = out;
    }
    const std::size_t outputs = specs.back().out_dim;
    nn::NetworkModel model = nn::init_model(specs, classifier ? outputs : 0, rng());
    for (nn::DenseLayer& layer : model.layers) {
      for (double& b : layer.bias) b = 0.5 * gauss(rng);
    }

    std::vector<double> x(specs.front().in_dim);
    for (double& v : x) v = gauss(rng);
    std::vector<double> target(outputs);
    if (classifier) {
      double sum = 0.0;
      for (double& t : target) sum += (t = unit(rng) + 1e-3);
      for (double& t : target) t /= sum;
    } else {
      for (double& t : target) t = unit(rng);
    }
    total.merge(check(model, x, target, temperature, kind, config.step));
  }
  return total;
}

}  // namespace distilshield::gradcheck
