#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <limits>
#include <random>

#include "distilshield/distill.hpp"
#include "distilshield/errors.hpp"
#include "distilshield/gate.hpp"
#include "distilshield/quantile.hpp"
#include "test_support.hpp"

using namespace distilshield;

namespace {

struct Fixture {
  data::Dataset train;
  nn::NetworkModel student;
};

const Fixture& fixture() {
  static const Fixture f = [] {
    data::SyntheticSpec spec;
    spec.image_side = 8;
    spec.samples_per_class = 25;
    spec.noise_sigma = 0.1;
    spec.seed = 4;
    Fixture out;
    out.train = data::generate_synthetic(spec);
    const std::vector<std::size_t> hidden = {16};
    nn::TrainConfig cfg{0.2, 15, 8, 1, 1.0};
    out.student = nn::train(nn::init_model(distill::classifier_specs(64, hidden, 4), 4, 2),
                            data::to_training_set(out.train), {}, cfg, nn::LossKind::cross_entropy)
                      .model;
    return out;
  }();
  return f;
}

}  // namespace

TEST_CASE("kl divergence") {
  const std::vector<double> p = {0.9, 0.1};
  const std::vector<double> q = {0.5, 0.5};
  CHECK(gate::kl_divergence(p, p) == 0.0);
  CHECK(gate::kl_divergence(std::vector<double>{1.0, 0.0}, q) ==
        doctest::Approx(0.693147180559945309).epsilon(1e-15));
  CHECK(gate::kl_divergence(p, q) != doctest::Approx(gate::kl_divergence(q, p)));
  CHECK(std::isfinite(gate::kl_divergence(q, std::vector<double>{1.0, 0.0})));
  CHECK_THROWS_AS(gate::kl_divergence(p, std::vector<double>{1.0}), ShapeError);
}

TEST_CASE("mc dropout") {
  const auto& f = fixture();
  const auto x = f.train.images[3].values();
  const auto det = gate::mc_dropout_predict(f.student, x, 0.0, 10, 1);
  CHECK(det.mean == nn::forward(f.student, x, 1.0));
  for (const double v : det.variance) CHECK(v == 0.0);
  const auto one = gate::mc_dropout_predict(f.student, x, 0.3, 1, 1);
  for (const double v : one.variance) CHECK(v == 0.0);
  const auto a = gate::mc_dropout_predict(f.student, x, 0.3, 20, 5);
  const auto b = gate::mc_dropout_predict(f.student, x, 0.3, 20, 5);
  CHECK(a.mean == b.mean);
  CHECK(a.variance == b.variance);
  double total = 0.0;
  for (const double v : a.mean) total += v;
  CHECK(std::abs(total - 1.0) <= 1e-12);
  CHECK_THROWS_AS(gate::mc_dropout_predict(f.student, x, 1.0, 5, 1), ParameterError);
  CHECK_THROWS_AS(gate::mc_dropout_predict(f.student, x, 0.2, 0, 1), ParameterError);
}

TEST_CASE("calibration") {
  const auto& f = fixture();
  const auto g = gate::calibrate_gate(f.student, f.train, 0.05, 0.2, 10, 3);
  for (const auto& proto : g.class_prototypes) {
    double total = 0.0;
    for (const double v : proto) total += v;
    CHECK(std::abs(total - 1.0) <= 1e-9);
  }
  const auto scores = gate::calibration_scores(f.student, g, f.train);
  REQUIRE(scores.size() == 100);
  CHECK(count_above(scores, g.kl_cutoff) == 5);

  std::size_t rejected = 0;
  for (const Tensor& x : f.train.images) {
    const auto p = gate::gated_predict(f.student, g, x.values());
    CHECK(p.verdict.has_value() == !(p.kl_score > g.kl_cutoff));
    rejected += !p.verdict.has_value();
  }
  CHECK(rejected == 5);

  const auto strict = gate::calibrate_gate(f.student, f.train, 0.999, 0.2, 10, 3);
  std::vector<double> sorted = gate::calibration_scores(f.student, strict, f.train);
  std::sort(sorted.begin(), sorted.end());
  CHECK(strict.kl_cutoff <= sorted[1]);

  data::Dataset missing = f.train.subset(std::vector<std::size_t>{0, 1, 2});
  CHECK_THROWS_AS(gate::calibrate_gate(f.student, missing, 0.05, 0.2, 10, 3), CalibrationError);
  CHECK_THROWS_AS(gate::calibrate_gate(f.student, f.train, 0.0, 0.2, 10, 3), ParameterError);
}

TEST_CASE("gated prediction") {
  const auto& f = fixture();
  const auto g = gate::calibrate_gate(f.student, f.train, 0.05, 0.2, 10, 3);
  SUBCASE("infinite cutoff never abstains and matches predict") {
    const auto open = gate::with_infinite_cutoff(g);
    for (const Tensor& x : f.train.images) {
      const auto p = gate::gated_predict(f.student, open, x.values());
      REQUIRE(p.verdict.has_value());
      CHECK(*p.verdict == distill::predict(f.student, x.values()).label);
    }
  }
  SUBCASE("off-distribution noise is mostly rejected") {
    std::mt19937_64 rng(12);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    std::size_t rejected = 0;
    for (std::size_t i = 0; i < 20; ++i) {
      std::vector<double> noise(f.train.input_dim());
      for (double& v : noise) v = u(rng);
      rejected += !gate::gated_predict(f.student, g, noise).verdict.has_value();
    }
    CHECK(rejected >= 10);
  }
  SUBCASE("save and load") {
    testing::TempDir dir("gate");
    gate::save_gate(dir / "g.txt", g);
    const auto back = gate::load_gate(dir / "g.txt");
    CHECK(back.class_prototypes == g.class_prototypes);
    CHECK(back.kl_cutoff == g.kl_cutoff);
    CHECK(back.seed == g.seed);
    gate::save_gate(dir / "open.txt", gate::with_infinite_cutoff(g));
    CHECK(std::isinf(gate::load_gate(dir / "open.txt").kl_cutoff));
  }
}
