#include <doctest.h>

#include <cmath>
#include <limits>
#include <random>
#include <sstream>

#include "distilshield/checkpoint.hpp"
#include "distilshield/errors.hpp"
#include "distilshield/gradcheck.hpp"
#include "distilshield/nn.hpp"

using namespace distilshield;
using nn::Activation;
using nn::LossKind;

namespace {

nn::NetworkModel single_layer(std::vector<double> w, std::vector<double> b, std::size_t in,
                              std::size_t out, Activation act, std::size_t classes) {
  nn::NetworkModel m;
  m.layers.push_back({{in, out, act}, std::move(w), std::move(b)});
  m.output_classes = classes;
  return m;
}

}  // namespace

TEST_CASE("init_model is seeded and bounded") {
  const std::vector<nn::LayerSpec> specs = {{4, 2, Activation::relu}};
  const auto a = nn::init_model(specs, 0, 7);
  const auto b = nn::init_model(specs, 0, 7);
  const auto c = nn::init_model(specs, 0, 8);
  CHECK(a == b);
  CHECK_FALSE(a == c);
  for (const double w : a.layers[0].weights) CHECK(std::abs(w) <= 1.0);
  for (const double v : a.layers[0].bias) CHECK(v == 0.0);
}

TEST_CASE("init_model rejects chains that do not connect") {
  const std::vector<nn::LayerSpec> specs = {{4, 3, Activation::relu}, {2, 2, Activation::identity}};
  CHECK_THROWS_AS(nn::init_model(specs, 2, 1), ConfigError);
}

TEST_CASE("temperature softmax") {
  SUBCASE("equal logits give the uniform vector") {
    const auto p = nn::softmax(std::vector<double>{3.5, 3.5, 3.5, 3.5}, 2.0);
    for (const double v : p) CHECK(v == doctest::Approx(0.25).epsilon(1e-15));
  }
  SUBCASE("z = [ln 2, 0] at T = 1") {
    const auto p = nn::softmax(std::vector<double>{std::log(2.0), 0.0}, 1.0);
    CHECK(p[0] == doctest::Approx(0.666666666666666667).epsilon(1e-14));
    CHECK(p[1] == doctest::Approx(0.333333333333333333).epsilon(1e-14));
  }
  SUBCASE("higher temperature raises entropy") {
    const std::vector<double> z = {1.0, 0.0};
    const double h1 = entropy(nn::softmax(z, 1.0));
    const double h5 = entropy(nn::softmax(z, 5.0));
    CHECK(h1 == doctest::Approx(0.582203108888217955).epsilon(1e-13));
    CHECK(h5 == doctest::Approx(0.688172069919096258).epsilon(1e-13));
    CHECK(h5 > h1);
  }
  SUBCASE("sums to one and ignores a common shift") {
    std::mt19937_64 rng(3);
    std::normal_distribution<double> g(0.0, 4.0);
    for (int trial = 0; trial < 200; ++trial) {
      std::vector<double> z(5);
      for (double& v : z) v = g(rng);
      const double t = 0.5 + trial % 7;
      const auto p = nn::softmax(z, t);
      double total = 0.0;
      for (const double v : p) total += v;
      CHECK(std::abs(total - 1.0) <= 1e-12);
      std::vector<double> shifted = z;
      for (double& v : shifted) v += 123.0;
      const auto q = nn::softmax(shifted, t);
      CHECK(max_abs_difference(p, q) <= 1e-12);
      CHECK(argmax(p) == argmax(z));
    }
  }
  SUBCASE("large logits stay finite") {
    const auto p = nn::softmax(std::vector<double>{1000.0, -1000.0}, 1.0);
    CHECK(p[0] == 1.0);
    CHECK(p[1] >= 0.0);
  }
  CHECK_THROWS_AS(nn::softmax(std::vector<double>{1.0}, 0.0), ParameterError);
  CHECK_THROWS_AS(nn::softmax(std::vector<double>{1.0}, -1.0), ParameterError);
}

TEST_CASE("softmax Jacobian shrinks with temperature for moderate logits") {
  // Frobenius norm of d softmax(z/T) / dz = (diag(p) - p p^T) / T.
  auto jacobian_norm = [](const std::vector<double>& z, double t) {
    const auto p = nn::softmax(z, t);
    double s = 0.0;
    for (std::size_t i = 0; i < p.size(); ++i) {
      for (std::size_t j = 0; j < p.size(); ++j) {
        const double v = ((i == j ? p[i] : 0.0) - p[i] * p[j]) / t;
        s += v * v;
      }
    }
    return std::sqrt(s);
  };
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  for (int trial = 0; trial < 500; ++trial) {
    std::vector<double> z(2 + trial % 9);
    for (double& v : z) v = u(rng);
    CHECK(jacobian_norm(z, 5.0) < jacobian_norm(z, 1.0));
  }
}

TEST_CASE("losses") {
  const std::vector<double> one_hot = {0.0, 1.0, 0.0};
  CHECK(nn::loss_cross_entropy(one_hot, one_hot) < 1e-9);
  CHECK(nn::loss_cross_entropy(std::vector<double>{0.5, 0.5}, std::vector<double>{0.5, 0.5}) ==
        doctest::Approx(0.693147180559945309).epsilon(1e-15));
  CHECK(nn::loss_cross_entropy(std::vector<double>{0.5, 0.5}, std::vector<double>{1.0, 0.0}) ==
        doctest::Approx(0.693147180559945309).epsilon(1e-15));
  CHECK(std::isfinite(nn::loss_cross_entropy(std::vector<double>{0.0, 1.0}, std::vector<double>{1.0, 0.0})));

  CHECK(nn::loss_mse(std::vector<double>{0.3, 0.7}, std::vector<double>{0.3, 0.7}) == 0.0);
  CHECK(nn::loss_mse(std::vector<double>{0.0, 0.0}, std::vector<double>{1.0, 1.0}) == 1.0);
  CHECK(nn::loss_mse(std::vector<double>{0.2, 0.4}, std::vector<double>{0.1, 0.6}) ==
        doctest::Approx(0.025).epsilon(1e-14));
  CHECK_THROWS_AS(nn::loss_mse(std::vector<double>{0.0}, std::vector<double>{0.0, 1.0}), ShapeError);
}

TEST_CASE("backward") {
  SUBCASE("symmetric constant model sits at a stationary point") {
    const auto m = single_layer(std::vector<double>(6, 0.0), {0.0, 0.0, 0.0}, 2, 3,
                                Activation::identity, 3);
    const std::vector<double> uniform(3, 1.0 / 3.0);
    const auto g = nn::backward(m, std::vector<double>{0.4, -1.2}, uniform, 1.0, LossKind::cross_entropy);
    for (const double v : g.layers[0].weights) CHECK(std::abs(v) < 1e-15);
    for (const double v : g.layers[0].bias) CHECK(std::abs(v) < 1e-15);
  }
  SUBCASE("linear softmax classifier has input gradient (p - y)^T W") {
    const std::vector<double> w = {0.7, -0.3, 0.2, -0.4, 0.5, 0.9};
    const auto m = single_layer(w, {0.1, -0.2}, 3, 2, Activation::identity, 2);
    const std::vector<double> x = {0.3, -0.6, 1.1};
    const std::vector<double> y = {1.0, 0.0};
    // independent closed form
    const double z0 = 0.7 * 0.3 - 0.3 * -0.6 + 0.2 * 1.1 + 0.1;
    const double z1 = -0.4 * 0.3 + 0.5 * -0.6 + 0.9 * 1.1 - 0.2;
    const double p0 = 1.0 / (1.0 + std::exp(z1 - z0));
    const double p1 = 1.0 - p0;
    const auto g = nn::input_gradient(m, x, y, 1.0, LossKind::cross_entropy);
    for (std::size_t j = 0; j < 3; ++j) {
      const double expected = (p0 - 1.0) * w[j] + p1 * w[3 + j];
      CHECK(g[j] == doctest::Approx(expected).epsilon(1e-12));
    }
  }
  SUBCASE("finite differences on small random models") {
    gradcheck::SuiteConfig cfg;
    cfg.trials = 12;
    cfg.max_dim = 6;
    cfg.seed = 99;
    const auto r = gradcheck::random_suite(cfg);
    CHECK(r.checked > 0);
    CHECK(r.max_relative_error < 1e-4);
  }
}

TEST_CASE("relative error uses a small denominator floor") {
  CHECK(gradcheck::relative_error(1.0, 1.0) == 0.0);
  CHECK(gradcheck::relative_error(1.0, 1.1) == doctest::Approx(0.1 / 1.1));
  CHECK(gradcheck::relative_error(0.0, 5e-7) == doctest::Approx(0.5));
}

TEST_CASE("sgd_step") {
  auto m = single_layer({1.0}, {0.0}, 1, 1, Activation::identity, 0);
  nn::Gradients g;
  g.layers.push_back({{0.5}, {0.0}});
  CHECK(nn::sgd_step(m, g, 0.0) == m);
  const auto stepped = nn::sgd_step(m, g, 0.1);
  CHECK(stepped.layers[0].weights[0] == doctest::Approx(0.95).epsilon(1e-15));

  SUBCASE("one small step lowers a convex loss") {
    const auto model = single_layer({0.8, -0.5}, {0.3}, 2, 1, Activation::identity, 0);
    const std::vector<double> x = {1.0, 2.0};
    const std::vector<double> t = {0.25};
    const auto grads = nn::backward(model, x, t, 1.0, LossKind::mse);
    const auto next = nn::sgd_step(model, grads, 0.01);
    CHECK(nn::evaluate_loss(next, x, t, 1.0, LossKind::mse) < grads.loss);
  }
}

TEST_CASE("train") {
  nn::TrainingSet xor_set;
  for (int i = 0; i < 4; ++i) {
    const double a = i & 1;
    const double b = (i >> 1) & 1;
    xor_set.inputs.push_back({a, b});
    const bool cls = (i == 1 || i == 2);
    xor_set.targets.push_back(cls ? std::vector<double>{0.0, 1.0} : std::vector<double>{1.0, 0.0});
  }
  const std::vector<nn::LayerSpec> specs = {{2, 8, Activation::sigmoid}, {8, 2, Activation::identity}};
  const auto initial = nn::init_model(specs, 2, 21);

  SUBCASE("zero epochs leave the model untouched") {
    nn::TrainConfig cfg;
    cfg.epochs = 0;
    const auto r = nn::train(initial, xor_set, {}, cfg, LossKind::cross_entropy);
    CHECK(r.model == initial);
    CHECK(r.history.empty());
  }
  SUBCASE("deterministic and improving on XOR") {
    nn::TrainConfig cfg;
    cfg.epochs = 500;
    cfg.batch_size = 2;
    cfg.learning_rate = 0.5;
    cfg.seed = 4;
    const double before = nn::mean_loss(initial, xor_set, 1.0, LossKind::cross_entropy);
    const auto a = nn::train(initial, xor_set, xor_set, cfg, LossKind::cross_entropy);
    const auto b = nn::train(initial, xor_set, xor_set, cfg, LossKind::cross_entropy);
    CHECK(a.model == b.model);
    REQUIRE(a.history.size() == 500);
    for (std::size_t i = 0; i < a.history.size(); ++i) {
      CHECK(a.history[i].train_loss == b.history[i].train_loss);
      CHECK(a.history[i].epoch == i + 1);
    }
    CHECK(nn::mean_loss(a.model, xor_set, 1.0, LossKind::cross_entropy) < before);
    CHECK(std::isnan(nn::train(initial, xor_set, {}, cfg, LossKind::cross_entropy).history[0].val_loss));
  }
  SUBCASE("empty data") {
    CHECK_THROWS_AS(nn::train(initial, {}, {}, nn::TrainConfig{}, LossKind::cross_entropy), InputError);
  }
}

TEST_CASE("dropout forward") {
  const std::vector<nn::LayerSpec> specs = {{4, 16, Activation::relu}, {16, 3, Activation::identity}};
  const auto m = nn::init_model(specs, 3, 2);
  const std::vector<double> x = {0.1, 0.5, 0.9, 0.3};
  Rng rng(1);
  CHECK(nn::forward_with_dropout(m, x, 1.0, 0.0, rng) == nn::forward(m, x, 1.0));
  Rng r1(9), r2(9);
  CHECK(nn::forward_with_dropout(m, x, 1.0, 0.5, r1) == nn::forward_with_dropout(m, x, 1.0, 0.5, r2));
}

TEST_CASE("checkpoint round trip is exact") {
  const std::vector<nn::LayerSpec> specs = {{5, 4, Activation::sigmoid}, {4, 3, Activation::identity}};
  auto m = nn::init_model(specs, 3, 17);
  m.layers[0].bias[1] = 0.1;
  m.layers[1].bias[2] = -1.0 / 3.0;
  std::stringstream buffer;
  write_checkpoint(buffer, {"teacher", 5.0, m});
  write_checkpoint(buffer, {"student", 5.0, m});
  const auto back = read_checkpoints(buffer);
  REQUIRE(back.size() == 2);
  CHECK(back[0].role == "teacher");
  CHECK(back[1].temperature == 5.0);
  CHECK(back[0].model == m);

  std::stringstream bad("distilshield-checkpoint 1\nrole x\nclasses 2\ntemperature abc\n");
  CHECK_THROWS_AS(read_checkpoints(bad), FormatError);
  CHECK(parse_real(format_real(0.1)) == 0.1);
  CHECK(parse_real(format_real(std::numeric_limits<double>::min())) == std::numeric_limits<double>::min());
}
