#include <doctest.h>

#include <cstdlib>
#include <fstream>
#include <sstream>

#include "distilshield/errors.hpp"
#include "distilshield/pipeline.hpp"
#include "test_support.hpp"

using namespace distilshield;
namespace pl = distilshield::pipeline;

namespace {

const char* kSmallConfig = R"(# small run
seed = 3
data.samples_per_class = 100
surrogate.epochs = 5
dae.epochs = 30
teacher.epochs = 5
student.epochs = 5
gate.mc_samples = 4
model.hidden = 16
dae.hidden = 32
dae.latent = 16
)";

pl::PipelineConfig small_config(const std::filesystem::path& out) {
  ConfigFile file = ConfigFile::parse(kSmallConfig);
  file.set("output.dir", out.string());
  return pl::PipelineConfig::from_config(file);
}

std::string metric(const pl::Metrics& rows, const std::string& name) {
  for (const auto& [k, v] : rows) {
    if (k == name) return v;
  }
  FAIL("missing metric " << name);
  return {};
}

int run_cli(const std::string& args) {
  const std::string cmd = std::string(DISTILSHIELD_CLI) + " " + args + " >/dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

}  // namespace

TEST_CASE("config files") {
  const ConfigFile f = ConfigFile::parse("a = 1\n# comment\n b.c = x y # trailing\nlist = 1, 2,3\n");
  CHECK(f.get_size("a", 0) == 1);
  CHECK(f.get_string("b.c", "") == "x y");
  CHECK(f.get_sizes("list", {}) == std::vector<std::size_t>{1, 2, 3});
  CHECK(f.get_real("missing", 2.5) == 2.5);
  CHECK(f.unused_keys().empty());
  CHECK_THROWS_AS(ConfigFile::parse("a = 1\na = 2\n"), ConfigError);
  CHECK_THROWS_AS(ConfigFile::parse("no equals sign\n"), ConfigError);
  CHECK_THROWS_AS(ConfigFile::parse("x = abc").get_real("x", 0.0), ConfigError);
  CHECK_THROWS_AS(ConfigFile::parse("x = -3").get_size("x", 0), ConfigError);
  CHECK_THROWS_AS(ConfigFile::parse("x = maybe").get_bool("x", false), ConfigError);
}

TEST_CASE("pipeline config") {
  const pl::PipelineConfig defaults = pl::PipelineConfig::from_config(ConfigFile{});
  CHECK(defaults.attack.epsilon == 0.01);
  CHECK(defaults.attack.alpha == 0.01);
  CHECK(defaults.attack.num_iterations == 10);
  CHECK(defaults.distill.train_temperature == 5.0);
  CHECK(defaults.significance == 0.05);
  CHECK(defaults.dropout_rate == 0.2);
  CHECK(defaults.mc_samples == 20);
  CHECK(defaults.initial_threshold == 0.015);

  CHECK_THROWS_AS(pl::PipelineConfig::from_config(ConfigFile::parse("attack.epsilonn = 0.1")), ConfigError);
  CHECK_THROWS_AS(pl::PipelineConfig::from_config(ConfigFile::parse("poison.fraction = 1.5")), ConfigError);
  CHECK_THROWS_AS(pl::PipelineConfig::from_config(ConfigFile::parse("dae.target_fraction = 0")), ConfigError);
  CHECK_THROWS_AS(pl::PipelineConfig::from_config(ConfigFile::parse("split.fractions = 0.5, 0.5")), ConfigError);
  CHECK_THROWS_AS(pl::PipelineConfig::from_config(ConfigFile::parse("data.source = idx")), ConfigError);
  CHECK_THROWS_AS(pl::PipelineConfig::from_config(ConfigFile::parse("poison.kind = pgd")), ConfigError);
}

TEST_CASE("pipeline run") {
  testing::TempDir a("pipe-a");
  testing::TempDir b("pipe-b");
  const auto report = pl::run_pipeline(small_config(a.path()));
  pl::run_pipeline(small_config(b.path()));
  for (const char* name : {"report.csv", "loss_curves.csv", "filter_outcome.csv", "poison_report.csv"}) {
    CAPTURE(name);
    REQUIRE(std::filesystem::exists(a / name));
    CHECK(testing::read_file(a / name) == testing::read_file(b / name));
  }
  CHECK(testing::read_file(a / "loss_curves.csv").rfind("stage,epoch,train_loss,val_loss\n", 0) == 0);
  CHECK(report.poisoned == static_cast<std::size_t>(0.3 * report.train_examples + 1e-9));
  for (const pl::StudentMetrics* s : {&report.student, &report.ablation}) {
    for (const pl::OutcomeRates* r : {&s->clean, &s->fgsm, &s->ifgsm}) {
      CHECK(r->correct + r->wrong + r->null == doctest::Approx(1.0).epsilon(1e-12));
      CHECK(r->correct >= 0.0);
      CHECK(r->null <= 1.0);
    }
  }
  CHECK(report.detection.precision >= 0.0);
  CHECK(report.detection.recall <= 1.0);
  CHECK(report.detection.kept + report.detection.discarded == report.train_examples);
}

TEST_CASE("no poisoning keeps the filter close to the target fraction") {
  testing::TempDir dir("pipe-clean");
  // Default sizes; the small test config undertrains the student.
  ConfigFile file;
  file.set("output.dir", dir.path().string());
  file.set("poison.fraction", "0");
  const auto report = pl::run_pipeline(pl::PipelineConfig::from_config(file));
  CHECK(report.poisoned == 0);
  CHECK(static_cast<double>(report.detection.discarded) <= 0.3 * report.train_examples);
  CHECK(std::abs(report.student.clean_accuracy - report.ablation.clean_accuracy) <= 0.03);
}

TEST_CASE("stage commands") {
  testing::TempDir dir("stages");
  pl::PipelineConfig cfg = small_config(dir.path());
  CHECK_THROWS_AS(pl::run_filter(cfg), IoError);
  pl::run_pipeline(cfg);

  const auto attack = pl::run_attack(cfg);
  CHECK(std::stod(metric(attack, "config.attack.epsilon")) == 0.01);
  CHECK(std::filesystem::exists(dir / "poisoned-images.idx"));
  const std::string report = testing::read_file(dir / "poison_report.csv");
  CHECK(std::count(report.begin(), report.end(), '\n') ==
        static_cast<long>(std::stoul(metric(attack, "attack.poisoned")) + 1));

  pl::run_train_dae(cfg);
  const auto threshold = pl::run_infer_threshold(cfg);
  CHECK(metric(threshold, "threshold.flagged") != "0");
  const auto filtered = pl::run_filter(cfg);
  CHECK(std::filesystem::exists(dir / "filtered-images.idx"));
  pl::run_distill(cfg);
  const auto evaluated = pl::run_evaluate(cfg);
  CHECK(std::filesystem::exists(dir / "evaluate_metrics.csv"));

  cfg.input_gate = "identity";
  CHECK(metric(pl::run_evaluate(cfg), "evaluate.null_rate") == "0");

  SUBCASE("epsilon zero leaves the data unchanged") {
    cfg.attack.epsilon = 0.0;
    cfg.input_images.clear();
    pl::run_attack(cfg);
    const auto out = data::load_idx(dir / "poisoned-images.idx", dir / "poisoned-labels.idx");
    CHECK(out == pl::load_splits(cfg).at(1));
  }
}

TEST_CASE("infer-threshold on a ten example fixture flags three") {
  testing::TempDir dir("ten");
  pl::PipelineConfig cfg = small_config(dir.path());
  data::Dataset ten;
  ten.class_count = 2;
  for (std::size_t i = 0; i < 10; ++i) {
    ten.images.push_back(Tensor({2, 2}, std::vector<double>(4, 0.05 * static_cast<double>(i + 1))));
    ten.labels.push_back(i % 2);
  }
  data::save_idx(ten, dir / "ten.img", dir / "ten.lbl", data::PixelEncoding::f64);
  dae::DaeArchitecture arch = dae::DaeArchitecture::for_input(4);
  dae::save_dae(dir / "dae.model", dae::init_dae(arch, 5));
  cfg.input_images = dir / "ten.img";
  cfg.input_labels = dir / "ten.lbl";
  cfg.target_fraction = 0.3;
  CHECK(metric(pl::run_infer_threshold(cfg), "threshold.flagged") == "3");
}

TEST_CASE("stage errors name the stage") {
  testing::TempDir dir("stage-error");
  pl::PipelineConfig cfg = small_config(dir.path());
  cfg.synthetic.samples_per_class = 1;  // too few examples to calibrate every class
  try {
    pl::run_pipeline(cfg);
    FAIL("expected a stage failure");
  } catch (const pl::StageError& e) {
    CHECK(std::string(e.what()).rfind("[", 0) == 0);
    CHECK_FALSE(e.stage().empty());
  }
}

TEST_CASE("command line exit codes") {
  testing::TempDir dir("cli");
  {
    std::ofstream(dir / "ok.cfg") << kSmallConfig << "gradcheck.trials = 5\n";
    std::ofstream(dir / "bad.cfg") << "attack.epsilon = banana\n";
    std::ofstream(dir / "typo.cfg") << "atack.epsilon = 0.1\n";
    std::ofstream(dir / "missing.cfg") << "input.dae = " << (dir / "nope").string() << "\n";
  }
  const std::string out = " --out " + (dir / "out").string();
  CHECK(run_cli("gradcheck --config " + (dir / "ok.cfg").string() + out) == 0);
  CHECK(run_cli("evaluate --config " + (dir / "bad.cfg").string() + out) == 2);
  CHECK(run_cli("evaluate --config " + (dir / "typo.cfg").string() + out) == 2);
  CHECK(run_cli("evaluate --config " + (dir / "absent.cfg").string() + out) == 2);
  CHECK(run_cli("frobnicate --config " + (dir / "ok.cfg").string()) == 2);
  CHECK(run_cli("filter --config " + (dir / "missing.cfg").string() + out) == 3);
  CHECK(run_cli("pipeline --config " + (dir / "ok.cfg").string() + out + " --seed 9") == 0);
  CHECK(std::filesystem::exists(dir / "out" / "report.csv"));
  CHECK(testing::read_file(dir / "out" / "report.csv").find("config.seed,9\n") != std::string::npos);
}
