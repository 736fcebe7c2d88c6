// distilshield command-line front end.

#include <cstdint>
#include <exception>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "distilshield/config.hpp"
#include "distilshield/errors.hpp"
#include "distilshield/pipeline.hpp"

namespace {

constexpr int kExitOk = 0;
constexpr int kExitConfig = 2;
constexpr int kExitStage = 3;
constexpr int kExitCheck = 4;

namespace ds = distilshield;
namespace pl = distilshield::pipeline;

void print(const pl::Metrics& rows) {
  for (const auto& [name, value] : rows) std::cout << name << ',' << value << '\n';
}

int dispatch(const std::string& command, const pl::PipelineConfig& cfg) {
  if (command == "pipeline") {
    const pl::ExperimentReport report = pl::run_pipeline(cfg);
    print(pl::report_rows(cfg, report));
  } else if (command == "attack") {
    print(pl::run_attack(cfg));
  } else if (command == "train-dae") {
    print(pl::run_train_dae(cfg));
  } else if (command == "infer-threshold") {
    print(pl::run_infer_threshold(cfg));
  } else if (command == "filter") {
    print(pl::run_filter(cfg));
  } else if (command == "distill") {
    print(pl::run_distill(cfg));
  } else if (command == "evaluate") {
    print(pl::run_evaluate(cfg));
  } else if (command == "gradcheck") {
    const pl::GradcheckOutcome outcome = pl::run_gradcheck(cfg);
    print(outcome.metrics);
    if (!outcome.passed) {
      std::cerr << "distilshield: gradient check failed\n";
      return kExitCheck;
    }
  }
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Denoising-autoencoder filtered defensive distillation"};
  app.require_subcommand(1, 1);

  std::string config_path;
  std::optional<std::string> out_dir;
  std::optional<std::uint64_t> seed;
  for (const char* name : {"pipeline", "attack", "train-dae", "infer-threshold", "filter",
                           "distill", "evaluate", "gradcheck"}) {
    CLI::App* sub = app.add_subcommand(name);
    sub->add_option("--config", config_path, "key = value config file")->required();
    sub->add_option("--out", out_dir, "output directory (overrides output.dir)");
    sub->add_option("--seed", seed, "global seed (overrides seed)");
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitConfig;
  }
  const std::string command = app.get_subcommands().front()->get_name();

  pl::PipelineConfig cfg;
  try {
    ds::ConfigFile file = ds::ConfigFile::load(config_path);
    if (out_dir) file.set("output.dir", *out_dir);
    if (seed) file.set("seed", std::to_string(*seed));
    cfg = pl::PipelineConfig::from_config(file);
  } catch (const ds::Error& e) {
    std::cerr << "distilshield: config error: " << e.what() << '\n';
    return kExitConfig;
  }

  try {
    return dispatch(command, cfg);
  } catch (const ds::ConfigError& e) {
    std::cerr << "distilshield: config error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const std::exception& e) {
    std::cerr << "distilshield " << command << ": " << e.what() << '\n';
    return kExitStage;
  }
}
