#include "distilshield/nn.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <string>

#include "distilshield/errors.hpp"
#include "distilshield/kernels.hpp"

namespace distilshield::nn {

namespace {

double activate(Activation a, double v) {
  switch (a) {
    case Activation::relu: return v > 0.0 ? v : 0.0;
    case Activation::sigmoid:
      if (v >= 0.0) return 1.0 / (1.0 + std::exp(-v));
      {
        const double e = std::exp(v);
        return e / (1.0 + e);
      }
    case Activation::identity: return v;
  }
  return v;
}

// Derivative expressed through the pre-activation and the activation output.
double activation_derivative(Activation a, double pre, double out) {
  switch (a) {
    case Activation::relu: return pre > 0.0 ? 1.0 : 0.0;
    case Activation::sigmoid: return out * (1.0 - out);
    case Activation::identity: return 1.0;
  }
  return 1.0;
}

void require_temperature(double temperature) {
  if (!(temperature > 0.0) || !std::isfinite(temperature)) {
    throw ParameterError("temperature must be positive, got " + std::to_string(temperature));
  }
}

void require_input(const NetworkModel& model, std::size_t n) {
  if (model.layers.empty()) throw ConfigError("model has no layers");
  if (n != model.input_dim()) {
    throw ShapeError("input has " + std::to_string(n) + " values, model expects " +
                     std::to_string(model.input_dim()));
  }
}

struct Trace {
  std::vector<std::vector<double>> inputs;  // input to layer k
  std::vector<std::vector<double>> pre;     // W h + b of layer k
  std::vector<double> output;               // activation of the last layer
};

Trace trace_forward(const NetworkModel& model, std::span<const double> x) {
  require_input(model, x.size());
  Trace t;
  t.inputs.reserve(model.layers.size());
  t.pre.reserve(model.layers.size());
  std::vector<double> h(x.begin(), x.end());
  for (const DenseLayer& layer : model.layers) {
    std::vector<double> a(layer.spec.out_dim);
    kernels::gemv(layer.weights, layer.spec.out_dim, layer.spec.in_dim, h, layer.bias, a);
    std::vector<double> out(a.size());
    for (std::size_t i = 0; i < a.size(); ++i) out[i] = activate(layer.spec.activation, a[i]);
    t.inputs.push_back(std::move(h));
    t.pre.push_back(std::move(a));
    h = std::move(out);
  }
  t.output = std::move(h);
  return t;
}

// dL/d(output of forward), i.e. w.r.t. probabilities or raw regression output.
std::vector<double> loss_output_gradient(LossKind kind, std::span<const double> out,
                                         std::span<const double> target) {
  std::vector<double> g(out.size());
  if (kind == LossKind::mse) {
    const double scale = 2.0 / static_cast<double>(out.size());
    for (std::size_t i = 0; i < out.size(); ++i) g[i] = scale * (out[i] - target[i]);
  } else {
    for (std::size_t i = 0; i < out.size(); ++i) {
      g[i] = out[i] > kProbabilityFloor ? -target[i] / out[i] : 0.0;
    }
  }
  return g;
}

// Gradient of the loss w.r.t. the last layer's (post-activation) output.
std::vector<double> head_gradient(const NetworkModel& model, const Trace& trace,
                                  std::span<const double> target, double temperature,
                                  LossKind kind, double& loss_value) {
  if (!model.is_classifier()) {
    if (target.size() != trace.output.size()) throw ShapeError("target length mismatch");
    loss_value = loss(kind, trace.output, target);
    return loss_output_gradient(kind, trace.output, target);
  }
  const std::vector<double> p = softmax(trace.output, temperature);
  if (target.size() != p.size()) throw ShapeError("target length mismatch");
  loss_value = loss(kind, p, target);
  std::vector<double> dz(p.size());
  if (kind == LossKind::cross_entropy) {
    // dL/du_j = -t_j [p_j active] + p_j * sum_{active} t_i, with u = z / T
    double active_mass = 0.0;
    for (std::size_t i = 0; i < p.size(); ++i) {
      if (p[i] > kProbabilityFloor) active_mass += target[i];
    }
    for (std::size_t j = 0; j < p.size(); ++j) {
      const double own = p[j] > kProbabilityFloor ? target[j] : 0.0;
      dz[j] = (p[j] * active_mass - own) / temperature;
    }
  } else {
    const std::vector<double> g = loss_output_gradient(kind, p, target);
    const double pg = std::inner_product(p.begin(), p.end(), g.begin(), 0.0);
    for (std::size_t j = 0; j < p.size(); ++j) dz[j] = p[j] * (g[j] - pg) / temperature;
  }
  return dz;
}

// Backpropagates `upstream` (dL/d last-layer output). Accumulates scale * grads
// into `acc` when non-null and returns dL/dx when `want_input`.
std::vector<double> propagate(const NetworkModel& model, const Trace& trace,
                              std::vector<double> upstream, Gradients* acc, double scale,
                              bool want_input) {
  std::vector<double> delta = std::move(upstream);
  for (std::size_t k = model.layers.size(); k-- > 0;) {
    const DenseLayer& layer = model.layers[k];
    const std::vector<double>& pre = trace.pre[k];
    const std::vector<double>& layer_out =
        (k + 1 < model.layers.size()) ? trace.inputs[k + 1] : trace.output;
    for (std::size_t i = 0; i < delta.size(); ++i) {
      delta[i] *= activation_derivative(layer.spec.activation, pre[i], layer_out[i]);
    }
    if (acc != nullptr) {
      LayerGradient& g = acc->layers[k];
      if (scale == 1.0) {
        kernels::outer_accumulate(delta, trace.inputs[k], g.weights);
        for (std::size_t i = 0; i < delta.size(); ++i) g.bias[i] += delta[i];
      } else {
        std::vector<double> scaled(delta.size());
        for (std::size_t i = 0; i < delta.size(); ++i) scaled[i] = scale * delta[i];
        kernels::outer_accumulate(scaled, trace.inputs[k], g.weights);
        for (std::size_t i = 0; i < delta.size(); ++i) g.bias[i] += scaled[i];
      }
    }
    if (k == 0 && !want_input) return {};
    std::vector<double> below(layer.spec.in_dim, 0.0);
    kernels::gemv_transposed_accumulate(layer.weights, layer.spec.out_dim,
                                        layer.spec.in_dim, delta, below);
    delta = std::move(below);
  }
  return delta;
}

Gradients zero_gradients(const NetworkModel& model) {
  Gradients g;
  g.layers.reserve(model.layers.size());
  for (const DenseLayer& layer : model.layers) {
    g.layers.push_back({std::vector<double>(layer.weights.size(), 0.0),
                        std::vector<double>(layer.bias.size(), 0.0)});
  }
  return g;
}

}  // namespace

std::string_view to_string(Activation activation) {
  switch (activation) {
    case Activation::relu: return "relu";
    case Activation::sigmoid: return "sigmoid";
    case Activation::identity: return "identity";
  }
  return "identity";
}

Activation parse_activation(std::string_view name) {
  if (name == "relu") return Activation::relu;
  if (name == "sigmoid") return Activation::sigmoid;
  if (name == "identity") return Activation::identity;
  throw ConfigError("unknown activation '" + std::string(name) + "'");
}

std::string_view to_string(LossKind kind) {
  return kind == LossKind::cross_entropy ? "cross_entropy" : "mse";
}

std::size_t NetworkModel::input_dim() const {
  return layers.empty() ? 0 : layers.front().spec.in_dim;
}

std::size_t NetworkModel::output_dim() const {
  return layers.empty() ? 0 : layers.back().spec.out_dim;
}

std::vector<LayerSpec> NetworkModel::specs() const {
  std::vector<LayerSpec> out;
  out.reserve(layers.size());
  for (const DenseLayer& l : layers) out.push_back(l.spec);
  return out;
}

void NetworkModel::validate() const {
  if (layers.empty()) throw ConfigError("model has no layers");
  for (std::size_t k = 0; k < layers.size(); ++k) {
    const DenseLayer& l = layers[k];
    if (l.spec.in_dim == 0 || l.spec.out_dim == 0) {
      throw ConfigError("layer " + std::to_string(k) + " has a zero dimension");
    }
    if (l.weights.size() != l.spec.in_dim * l.spec.out_dim ||
        l.bias.size() != l.spec.out_dim) {
      throw ConfigError("layer " + std::to_string(k) + " parameter sizes do not match its spec");
    }
    if (k > 0 && layers[k - 1].spec.out_dim != l.spec.in_dim) {
      throw ConfigError("layer " + std::to_string(k) + " input " +
                        std::to_string(l.spec.in_dim) + " does not match previous output " +
                        std::to_string(layers[k - 1].spec.out_dim));
    }
    require_finite(l.weights, "weights");
    require_finite(l.bias, "bias");
  }
  if (output_classes > 0 && output_classes != output_dim()) {
    throw ConfigError("classifier head has " + std::to_string(output_dim()) +
                      " outputs but " + std::to_string(output_classes) + " classes");
  }
}

void TrainConfig::validate() const {
  if (!(learning_rate > 0.0)) throw ParameterError("learning_rate must be positive");
  if (batch_size == 0) throw ParameterError("batch_size must be positive");
  require_temperature(temperature);
}

NetworkModel init_model(std::span<const LayerSpec> specs, std::size_t classes,
                        std::uint64_t seed) {
  if (specs.empty()) throw ConfigError("at least one layer is required");
  NetworkModel model;
  model.output_classes = classes;
  Rng rng(seed);
  for (std::size_t k = 0; k < specs.size(); ++k) {
    const LayerSpec& s = specs[k];
    if (s.in_dim == 0 || s.out_dim == 0) throw ConfigError("layer dimensions must be >= 1");
    if (k > 0 && specs[k - 1].out_dim != s.in_dim) {
      throw ConfigError("layer " + std::to_string(k) + " does not chain: in_dim " +
                        std::to_string(s.in_dim) + " != previous out_dim " +
                        std::to_string(specs[k - 1].out_dim));
    }
    const double limit = std::sqrt(6.0 / static_cast<double>(s.in_dim + s.out_dim));
    std::uniform_real_distribution<double> dist(-limit, limit);
    DenseLayer layer{s, std::vector<double>(s.in_dim * s.out_dim),
                     std::vector<double>(s.out_dim, 0.0)};
    for (double& w : layer.weights) w = dist(rng);
    model.layers.push_back(std::move(layer));
  }
  model.validate();
  return model;
}

std::vector<double> softmax(std::span<const double> logits, double temperature) {
  require_temperature(temperature);
  if (logits.empty()) throw ShapeError("softmax of an empty vector");
  const double top = *std::max_element(logits.begin(), logits.end());
  std::vector<double> p(logits.size());
  double total = 0.0;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    p[i] = std::exp((logits[i] - top) / temperature);
    total += p[i];
  }
  for (double& v : p) v /= total;
  return p;
}

std::vector<double> logits(const NetworkModel& model, std::span<const double> x) {
  return trace_forward(model, x).output;
}

std::vector<double> forward(const NetworkModel& model, std::span<const double> x,
                            double temperature) {
  require_temperature(temperature);
  std::vector<double> out = logits(model, x);
  if (!model.is_classifier()) return out;
  return softmax(out, temperature);
}

Tensor forward(const NetworkModel& model, const Tensor& x, double temperature) {
  return Tensor::vector(forward(model, x.values(), temperature));
}

std::vector<double> forward_with_dropout(const NetworkModel& model,
                                         std::span<const double> x, double temperature,
                                         double rate, Rng& rng) {
  require_temperature(temperature);
  require_input(model, x.size());
  if (!(rate >= 0.0 && rate < 1.0)) throw ParameterError("dropout rate must be in [0, 1)");
  std::bernoulli_distribution drop(rate);
  const double keep_scale = 1.0 / (1.0 - rate);
  std::vector<double> h(x.begin(), x.end());
  for (std::size_t k = 0; k < model.layers.size(); ++k) {
    const DenseLayer& layer = model.layers[k];
    std::vector<double> a(layer.spec.out_dim);
    kernels::gemv(layer.weights, layer.spec.out_dim, layer.spec.in_dim, h, layer.bias, a);
    const bool hidden = k + 1 < model.layers.size();
    for (double& v : a) {
      v = activate(layer.spec.activation, v);
      if (hidden && rate > 0.0) v = drop(rng) ? 0.0 : v * keep_scale;
    }
    h = std::move(a);
  }
  if (!model.is_classifier()) return h;
  return softmax(h, temperature);
}

double loss_cross_entropy(std::span<const double> probs, std::span<const double> target) {
  if (probs.size() != target.size()) {
    throw ShapeError("cross entropy: " + std::to_string(probs.size()) + " probabilities vs " +
                     std::to_string(target.size()) + " targets");
  }
  double total = 0.0;
  for (std::size_t i = 0; i < probs.size(); ++i) {
    if (target[i] != 0.0) total -= target[i] * std::log(std::max(probs[i], kProbabilityFloor));
  }
  return total;
}

double loss_mse(std::span<const double> x, std::span<const double> x_hat) {
  if (x.size() != x_hat.size()) {
    throw ShapeError("mse: lengths " + std::to_string(x.size()) + " and " +
                     std::to_string(x_hat.size()) + " differ");
  }
  if (x.empty()) throw ShapeError("mse of empty vectors");
  return kernels::squared_distance(x, x_hat) / static_cast<double>(x.size());
}

double loss(LossKind kind, std::span<const double> output, std::span<const double> target) {
  return kind == LossKind::cross_entropy ? loss_cross_entropy(output, target)
                                         : loss_mse(output, target);
}

double evaluate_loss(const NetworkModel& model, std::span<const double> x,
                     std::span<const double> target, double temperature, LossKind kind) {
  return loss(kind, forward(model, x, temperature), target);
}

Gradients backward(const NetworkModel& model, std::span<const double> x,
                   std::span<const double> target, double temperature, LossKind kind) {
  require_temperature(temperature);
  const Trace trace = trace_forward(model, x);
  Gradients grads = zero_gradients(model);
  std::vector<double> upstream =
      head_gradient(model, trace, target, temperature, kind, grads.loss);
  grads.input = propagate(model, trace, std::move(upstream), &grads, 1.0, true);
  return grads;
}

std::vector<double> input_gradient(const NetworkModel& model, std::span<const double> x,
                                   std::span<const double> target, double temperature,
                                   LossKind kind) {
  require_temperature(temperature);
  const Trace trace = trace_forward(model, x);
  double unused = 0.0;
  std::vector<double> upstream = head_gradient(model, trace, target, temperature, kind, unused);
  return propagate(model, trace, std::move(upstream), nullptr, 1.0, true);
}

void apply_sgd(NetworkModel& model, const Gradients& grads, double learning_rate) {
  if (grads.layers.size() != model.layers.size()) {
    throw ShapeError("gradient has " + std::to_string(grads.layers.size()) +
                     " layers, model has " + std::to_string(model.layers.size()));
  }
  for (std::size_t k = 0; k < model.layers.size(); ++k) {
    DenseLayer& layer = model.layers[k];
    const LayerGradient& g = grads.layers[k];
    if (g.weights.size() != layer.weights.size() || g.bias.size() != layer.bias.size()) {
      throw ShapeError("gradient shape mismatch at layer " + std::to_string(k));
    }
    kernels::axpy(-learning_rate, g.weights, layer.weights);
    kernels::axpy(-learning_rate, g.bias, layer.bias);
  }
}

NetworkModel sgd_step(NetworkModel model, const Gradients& grads, double learning_rate) {
  apply_sgd(model, grads, learning_rate);
  return model;
}

double mean_loss(const NetworkModel& model, const TrainingSet& data, double temperature,
                 LossKind kind) {
  if (data.empty()) return std::numeric_limits<double>::quiet_NaN();
  double total = 0.0;
  for (std::size_t i = 0; i < data.size(); ++i) {
    total += evaluate_loss(model, data.inputs[i], data.targets[i], temperature, kind);
  }
  return total / static_cast<double>(data.size());
}

TrainResult train(NetworkModel model, const TrainingSet& data,
                  const TrainingSet& validation, const TrainConfig& config,
                  LossKind kind) {
  config.validate();
  model.validate();
  if (config.epochs == 0) return {std::move(model), {}};
  if (data.empty()) throw InputError("training set is empty");
  if (data.inputs.size() != data.targets.size()) {
    throw ShapeError("training set has mismatched input and target counts");
  }
  if (kind == LossKind::cross_entropy && !model.is_classifier()) {
    throw ConfigError("cross entropy requires a classifier head");
  }

  Rng rng(config.seed);
  std::vector<std::size_t> order(data.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  TrainResult result;
  result.history.reserve(config.epochs);

  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    double epoch_loss = 0.0;
    for (std::size_t start = 0; start < order.size(); start += config.batch_size) {
      const std::size_t end = std::min(order.size(), start + config.batch_size);
      const double scale = 1.0 / static_cast<double>(end - start);
      Gradients acc = zero_gradients(model);
      for (std::size_t b = start; b < end; ++b) {
        const std::size_t i = order[b];
        const Trace trace = trace_forward(model, data.inputs[i]);
        double loss_value = 0.0;
        std::vector<double> upstream = head_gradient(model, trace, data.targets[i],
                                                     config.temperature, kind, loss_value);
        propagate(model, trace, std::move(upstream), &acc, scale, false);
        epoch_loss += loss_value;
      }
      apply_sgd(model, acc, config.learning_rate);
    }
    for (const DenseLayer& layer : model.layers) require_finite(layer.weights, "weights after SGD");
    result.history.push_back({epoch + 1, epoch_loss / static_cast<double>(data.size()),
                              mean_loss(model, validation, config.temperature, kind)});
  }
  result.model = std::move(model);
  return result;
}

}  // namespace distilshield::nn
