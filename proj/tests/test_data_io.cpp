#include <doctest.h>

#include <algorithm>
#include <set>

#include "distilshield/distill.hpp"
#include "distilshield/data_io.hpp"
#include "distilshield/errors.hpp"
#include "test_support.hpp"

using namespace distilshield;

namespace {

std::vector<std::uint8_t> image_file(std::uint32_t magic, std::uint32_t count,
                                     const std::vector<std::uint8_t>& pixels) {
  std::vector<std::uint8_t> b;
  testing::push_u32(b, magic);
  testing::push_u32(b, count);
  testing::push_u32(b, 2);
  testing::push_u32(b, 2);
  b.insert(b.end(), pixels.begin(), pixels.end());
  return b;
}

std::vector<std::uint8_t> label_file(const std::vector<std::uint8_t>& labels) {
  std::vector<std::uint8_t> b;
  testing::push_u32(b, data::kIdxLabelsU8);
  testing::push_u32(b, static_cast<std::uint32_t>(labels.size()));
  b.insert(b.end(), labels.begin(), labels.end());
  return b;
}

}  // namespace

TEST_CASE("load_idx reads the 2x2 fixture") {
  testing::TempDir dir("idx");
  testing::write_bytes(dir / "img", image_file(data::kIdxImagesU8, 2, {0, 255, 255, 0, 255, 255, 0, 0}));
  testing::write_bytes(dir / "lbl", label_file({1, 0}));
  const data::Dataset d = data::load_idx(dir / "img", dir / "lbl");
  REQUIRE(d.size() == 2);
  CHECK(d.class_count == 2);
  CHECK(d.images[0].shape() == std::vector<std::size_t>{2, 2});
  CHECK(d.images[0].data() == std::vector<double>{0.0, 1.0, 1.0, 0.0});
  CHECK(d.images[1].data() == std::vector<double>{1.0, 1.0, 0.0, 0.0});
  CHECK(d.labels == std::vector<std::size_t>{1, 0});

  SUBCASE("round trip is byte identical") {
    data::save_idx(d, dir / "img2", dir / "lbl2");
    CHECK(testing::read_file(dir / "img2") == testing::read_file(dir / "img"));
    CHECK(testing::read_file(dir / "lbl2") == testing::read_file(dir / "lbl"));
  }
  SUBCASE("f64 encoding keeps arbitrary pixels") {
    data::Dataset fine = d;
    fine.images[0][1] = 0.123456789012345;
    data::save_idx(fine, dir / "f.img", dir / "f.lbl", data::PixelEncoding::f64);
    CHECK(data::load_idx(dir / "f.img", dir / "f.lbl") == fine);
  }
}

TEST_CASE("load_idx errors") {
  testing::TempDir dir("idx-bad");
  testing::write_bytes(dir / "lbl", label_file({1, 0}));
  SUBCASE("wrong magic") {
    testing::write_bytes(dir / "img", image_file(0x00001803, 2, {0, 1, 2, 3, 4, 5, 6, 7}));
    CHECK_THROWS_AS(data::load_idx(dir / "img", dir / "lbl"), FormatError);
  }
  SUBCASE("truncated pixels") {
    testing::write_bytes(dir / "img", image_file(data::kIdxImagesU8, 2, {0, 1, 2, 3, 4}));
    CHECK_THROWS_AS(data::load_idx(dir / "img", dir / "lbl"), IoError);
  }
  SUBCASE("count mismatch") {
    testing::write_bytes(dir / "img", image_file(data::kIdxImagesU8, 1, {0, 1, 2, 3}));
    CHECK_THROWS_AS(data::load_idx(dir / "img", dir / "lbl"), ConsistencyError);
  }
  SUBCASE("missing file") {
    CHECK_THROWS_AS(data::load_idx(dir / "nope", dir / "lbl"), IoError);
  }
}

TEST_CASE("generate_synthetic") {
  data::SyntheticSpec spec;
  spec.samples_per_class = 5;
  spec.noise_sigma = 0.0;
  const data::Dataset exact = data::generate_synthetic(spec);
  CHECK(exact.size() == 20);
  for (std::size_t i = 0; i < exact.size(); ++i) {
    CHECK(exact.images[i] == data::class_template(exact.labels[i], spec.image_side));
  }
  spec.noise_sigma = 0.1;
  spec.seed = 5;
  const data::Dataset a = data::generate_synthetic(spec);
  CHECK(a == data::generate_synthetic(spec));
  for (const Tensor& t : a.images) {
    for (const double v : t.values()) CHECK((v >= 0.0 && v <= 1.0));
  }
  spec.class_count = data::kTemplateCount + 1;
  CHECK_THROWS_AS(data::generate_synthetic(spec), ParameterError);
}

TEST_CASE("templates follow the documented shapes") {
  const std::size_t side = 16;
  auto at = [&](std::size_t label, std::size_t r, std::size_t c) {
    return data::class_template(label, side)[r * side + c];
  };
  CHECK(at(0, 7, 0) == data::kForegroundLevel);   // horizontal bar
  CHECK(at(0, 0, 7) == data::kBackgroundLevel);
  CHECK(at(1, 0, 7) == data::kForegroundLevel);   // vertical bar
  CHECK(at(1, 7, 0) == data::kBackgroundLevel);
  CHECK(at(2, 7, 0) == data::kForegroundLevel);   // cross
  CHECK(at(2, 0, 7) == data::kForegroundLevel);
  CHECK(at(3, 5, 5) == data::kForegroundLevel);   // diagonal
  CHECK(at(3, 5, 9) == data::kBackgroundLevel);
}

TEST_CASE("a small classifier separates the synthetic classes") {
  data::SyntheticSpec spec;
  spec.samples_per_class = 60;
  spec.noise_sigma = 0.1;
  spec.seed = 8;
  const auto parts = data::split(data::generate_synthetic(spec), std::vector<double>{0.7, 0.3}, 3);
  const std::vector<std::size_t> hidden = {32};
  nn::TrainConfig cfg;
  cfg.learning_rate = 0.1;
  cfg.epochs = 20;
  cfg.seed = 2;
  const auto model = nn::train(nn::init_model(distill::classifier_specs(256, hidden, 4), 4, 1),
                               data::to_training_set(parts[0]), {}, cfg,
                               nn::LossKind::cross_entropy)
                         .model;
  CHECK(distill::accuracy(model, parts[1]) >= 0.95);
}

TEST_CASE("split") {
  data::SyntheticSpec spec;
  spec.samples_per_class = 25;
  spec.noise_sigma = 0.0;
  const data::Dataset d = data::generate_synthetic(spec);
  const std::vector<double> whole = {1.0};
  const auto all = data::split(d, whole, 1);
  REQUIRE(all.size() == 1);
  CHECK(all[0].size() == d.size());
  CHECK(all[0] == data::split(d, whole, 1)[0]);

  CHECK(data::split_sizes(10, std::vector<double>{0.5, 0.5}) == std::vector<std::size_t>{5, 5});
  CHECK(data::split_sizes(103, std::vector<double>{0.7, 0.2, 0.1}) ==
        std::vector<std::size_t>{72, 20, 11});
  CHECK_THROWS_AS(data::split_sizes(10, std::vector<double>{0.5, 0.6}), ParameterError);

  // Disjointness, checked through a dataset with distinguishable images.
  data::Dataset tagged;
  tagged.class_count = 1;
  for (std::size_t i = 0; i < 10; ++i) {
    tagged.images.push_back(Tensor::vector({static_cast<double>(i) / 10.0}));
    tagged.labels.push_back(0);
  }
  const auto halves = data::split(tagged, std::vector<double>{0.5, 0.5}, 4);
  std::set<double> seen;
  for (const auto& part : halves) {
    for (const Tensor& t : part.images) seen.insert(t[0]);
  }
  CHECK(seen.size() == 10);
}

TEST_CASE("manifest lists poisoned flags") {
  testing::TempDir dir("manifest");
  data::Dataset d;
  d.class_count = 2;
  for (std::size_t i = 0; i < 3; ++i) {
    d.images.push_back(Tensor::vector({0.5}));
    d.labels.push_back(i % 2);
  }
  const std::vector<std::size_t> poisoned = {1};
  data::write_manifest(dir / "m.csv", d, poisoned);
  CHECK(testing::read_file(dir / "m.csv") == "index,label,poisoned\n0,0,0\n1,1,1\n2,0,0\n");
}
