#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <random>

#include "distilshield/attacks.hpp"
#include "distilshield/distill.hpp"
#include "distilshield/errors.hpp"
#include "test_support.hpp"

using namespace distilshield;
using attacks::AttackParams;
using attacks::ProjectionMode;

namespace {

nn::NetworkModel mirror_model() {
  nn::NetworkModel m;
  m.layers.push_back({{2, 2, nn::Activation::identity}, {1.0, -1.0, -1.0, 1.0}, {0.0, 0.0}});
  m.output_classes = 2;
  return m;
}

nn::NetworkModel random_classifier(std::uint64_t seed) {
  const std::vector<std::size_t> hidden = {8};
  return nn::init_model(distill::classifier_specs(6, hidden, 3), 3, seed);
}

double linf(std::span<const double> a, std::span<const double> b) { return max_abs_difference(a, b); }

}  // namespace

TEST_CASE("fgsm") {
  const auto model = mirror_model();
  const std::vector<double> x = {0.5, 0.4};
  AttackParams p;
  SUBCASE("zero epsilon is the identity") {
    p.epsilon = 0.0;
    CHECK(attacks::fgsm(model, x, 0, p) == x);
  }
  SUBCASE("matches the closed-form gradient sign") {
    // dL/dx = (p - y)^T W = [-2 p1, 2 p1] for true class 0
    const auto adv = attacks::fgsm(model, x, 0, p);
    CHECK(adv[0] == doctest::Approx(0.49).epsilon(1e-15));
    // 0.4 + 0.01 rounds just outside the ball, so the step is pinned one ulp inside it.
    CHECK(adv[1] == doctest::Approx(0.41).epsilon(1e-15));
    CHECK(adv[1] > 0.4);
    CHECK(linf(adv, x) <= 0.01);
  }
  SUBCASE("clips to the pixel range") {
    const std::vector<double> edge = {0.005, 0.999};
    const auto adv = attacks::fgsm(model, edge, 0, p);
    CHECK(adv[0] == 0.0);
    CHECK(adv[1] == 1.0);
  }
  SUBCASE("input validation") {
    CHECK_THROWS_AS(attacks::fgsm(model, std::vector<double>{0.5}, 0, p), ShapeError);
    CHECK_THROWS_AS(attacks::fgsm(model, x, 2, p), ParameterError);
    p.epsilon = -0.1;
    CHECK_THROWS_AS(attacks::fgsm(model, x, 0, p), ParameterError);
  }
}

TEST_CASE("ifgsm") {
  std::mt19937_64 rng(4);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int trial = 0; trial < 50; ++trial) {
    const auto model = random_classifier(100 + trial);
    std::vector<double> x(6);
    for (double& v : x) v = u(rng);
    const std::size_t label = trial % 3;

    AttackParams ball;
    ball.epsilon = 0.03;
    ball.alpha = 0.03;
    ball.num_iterations = 1;
    ball.projection = ProjectionMode::ball;
    CHECK(attacks::ifgsm(model, x, label, ball) == attacks::fgsm(model, x, label, ball));

    ball.alpha = 0.01;
    ball.num_iterations = 10;
    const auto in_ball = attacks::ifgsm(model, x, label, ball);
    CHECK(linf(in_ball, x) <= ball.epsilon);

    AttackParams cumulative;  // 0.01 / 0.01 / 10 iterations
    const auto far = attacks::ifgsm(model, x, label, cumulative);
    CHECK(linf(far, x) <= 0.1);
    for (const double v : far) CHECK((v >= 0.0 && v <= 1.0));
    CHECK(far == attacks::ifgsm(model, x, label, cumulative));
  }
  AttackParams bad;
  bad.num_iterations = 0;
  CHECK_THROWS_AS(bad.validate(), ParameterError);
}

TEST_CASE("iterating raises the loss more than one step") {
  data::SyntheticSpec spec;
  spec.samples_per_class = 100;
  spec.seed = 21;
  const auto parts = data::split(data::generate_synthetic(spec), std::vector<double>{0.5, 0.5}, 2);
  const std::vector<std::size_t> hidden = {32};
  nn::TrainConfig cfg;
  cfg.learning_rate = 0.1;
  cfg.epochs = 10;
  cfg.seed = 5;
  const auto model = nn::train(nn::init_model(distill::classifier_specs(256, hidden, 4), 4, 3),
                               data::to_training_set(parts[0]), {}, cfg,
                               nn::LossKind::cross_entropy)
                         .model;
  AttackParams p;
  std::size_t stronger = 0;
  const data::Dataset& test = parts[1];
  for (std::size_t i = 0; i < test.size(); ++i) {
    const auto target = data::one_hot(test.labels[i], 4);
    const auto a = attacks::fgsm(model, test.images[i].values(), test.labels[i], p);
    const auto b = attacks::ifgsm(model, test.images[i].values(), test.labels[i], p);
    stronger += nn::evaluate_loss(model, b, target, 1.0, nn::LossKind::cross_entropy) >=
                nn::evaluate_loss(model, a, target, 1.0, nn::LossKind::cross_entropy);
  }
  CHECK(static_cast<double>(stronger) >= 0.8 * static_cast<double>(test.size()));
}

TEST_CASE("poison_dataset") {
  data::SyntheticSpec spec;
  spec.samples_per_class = 25;
  spec.seed = 3;
  const data::Dataset d = data::generate_synthetic(spec);
  const std::vector<std::size_t> hidden = {16};
  const auto model = nn::init_model(distill::classifier_specs(256, hidden, 4), 4, 9);
  AttackParams p;

  SUBCASE("fraction 0") {
    const auto [out, report] = attacks::poison_dataset(d, model, p, 0.0, attacks::AttackKind::fgsm, 1);
    CHECK(out == d);
    CHECK(report.poisoned_indices.empty());
  }
  SUBCASE("fraction 1") {
    const auto [out, report] = attacks::poison_dataset(d, model, p, 1.0, attacks::AttackKind::fgsm, 1);
    CHECK(report.poisoned_indices.size() == d.size());
    CHECK(out.labels == d.labels);
  }
  SUBCASE("fraction 0.3 of 100") {
    const auto [out, report] = attacks::poison_dataset(d, model, p, 0.3, attacks::AttackKind::ifgsm, 7);
    CHECK(report.poisoned_indices.size() == 30);
    CHECK(std::is_sorted(report.poisoned_indices.begin(), report.poisoned_indices.end()));
    const auto again = attacks::poison_dataset(d, model, p, 0.3, attacks::AttackKind::ifgsm, 7);
    CHECK(again.second.poisoned_indices == report.poisoned_indices);
    CHECK(again.first == out);
    CHECK(out.labels == d.labels);
    for (std::size_t i = 0; i < report.linf.size(); ++i) CHECK(report.linf[i] <= 0.1);

    testing::TempDir dir("poison");
    attacks::write_poison_report(dir / "p.csv", report);
    const std::string text = testing::read_file(dir / "p.csv");
    CHECK(std::count(text.begin(), text.end(), '\n') == 31);
  }
  SUBCASE("fraction out of range") {
    CHECK_THROWS_AS(attacks::poison_dataset(d, model, p, 1.5, attacks::AttackKind::fgsm, 1), ParameterError);
    CHECK_THROWS_AS(attacks::poison_dataset(d, model, p, -0.1, attacks::AttackKind::fgsm, 1), ParameterError);
  }
}
