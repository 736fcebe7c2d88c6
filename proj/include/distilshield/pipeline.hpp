#pragma once

// End-to-end experiment and the stage-wise commands behind the CLI.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "distilshield/attacks.hpp"
#include "distilshield/config.hpp"
#include "distilshield/dae.hpp"
#include "distilshield/data_io.hpp"
#include "distilshield/distill.hpp"
#include "distilshield/errors.hpp"
#include "distilshield/gate.hpp"
#include "distilshield/nn.hpp"

namespace distilshield::pipeline {

/// A failure inside one pipeline stage; what() starts with "[stage] ".
class StageError : public Error {
 public:
  StageError(std::string stage, const std::string& message);
  const std::string& stage() const { return stage_; }

 private:
  std::string stage_;
};

enum class DataSource { synthetic, idx };

struct PipelineConfig {
  std::uint64_t seed = 1;
  std::filesystem::path output_dir = "distilshield-out";

  DataSource source = DataSource::synthetic;
  data::SyntheticSpec synthetic{16, 4, 400, 0.02, 0};
  std::filesystem::path images_path;
  std::filesystem::path labels_path;
  // dae / train / validation / test
  std::vector<double> split = {0.25, 0.45, 0.1, 0.2};

  std::vector<std::size_t> classifier_hidden = {64, 32};
  nn::TrainConfig surrogate{0.1, 30, 16, 0, 1.0};

  double poison_fraction = 0.3;
  attacks::AttackKind poison_kind = attacks::AttackKind::fgsm;
  attacks::AttackParams attack;

  std::size_t dae_hidden = 64;
  std::size_t dae_latent = 32;
  nn::TrainConfig dae_train{15.0, 100, 16, 0, 1.0};
  dae::CorruptionMode corruption = dae::CorruptionMode::mixed;
  double dae_noise_sigma = 0.05;
  double target_fraction = 0.3;
  double initial_threshold = dae::kInitialThreshold;
  dae::PassMode pass_mode = dae::PassMode::reconstructed;

  distill::DistillConfig distill;

  double significance = 0.05;
  double dropout_rate = 0.2;
  std::size_t mc_samples = 20;

  attacks::AttackParams eval_attack;
  bool ablation = true;

  // Stage-command inputs; empty paths fall back to files in output_dir or to
  // the configured data source.
  std::filesystem::path input_images;
  std::filesystem::path input_labels;
  std::filesystem::path input_model;
  std::filesystem::path input_dae;
  std::filesystem::path input_threshold;
  std::filesystem::path input_student;
  std::filesystem::path input_gate;  // "identity" selects a never-null gate

  std::size_t gradcheck_trials = 100;

  /// Reads every known key; unknown keys raise ConfigError.
  static PipelineConfig from_config(const ConfigFile& file);
  void validate() const;
};

/// Ordered (name, value) rows written as metric,value CSV.
using Metrics = std::vector<std::pair<std::string, std::string>>;

struct DetectionMetrics {
  double precision = 0.0;
  double recall = 0.0;
  double mean_error_clean = 0.0;
  double mean_error_adversarial = 0.0;
  double initial_threshold = 0.0;
  std::size_t flagged_at_initial = 0;
  double inferred_threshold = 0.0;
  std::size_t discarded = 0;
  std::size_t kept = 0;
};

/// Gated outcome rates; correct + wrong + null == 1.
struct OutcomeRates {
  double correct = 0.0;
  double wrong = 0.0;
  double null = 0.0;
};

struct StudentMetrics {
  double clean_accuracy = 0.0;      // ungated
  OutcomeRates clean;               // gated
  OutcomeRates fgsm;                // gated, under FGSM
  OutcomeRates ifgsm;               // gated, under I-FGSM
  double fgsm_ungated_accuracy = 0.0;
  double ifgsm_ungated_accuracy = 0.0;

  double robust_accuracy_fgsm() const { return fgsm.correct; }
  double robust_accuracy_ifgsm() const { return ifgsm.correct; }
};

struct LossCurve {
  std::string stage;
  std::vector<nn::EpochLoss> history;
};

struct ExperimentReport {
  std::size_t dae_examples = 0;
  std::size_t train_examples = 0;
  std::size_t test_examples = 0;
  std::size_t poisoned = 0;
  double poison_mean_linf = 0.0;
  double surrogate_accuracy = 0.0;
  DetectionMetrics detection;
  double teacher_accuracy = 0.0;  // on its own training data at T = 1
  double teacher_loss = 0.0;      // final training loss
  StudentMetrics student;
  bool ablation_ran = false;
  double ablation_teacher_accuracy = 0.0;
  StudentMetrics ablation;
  std::vector<LossCurve> loss_curves;
};

/// Splits of the configured dataset: dae, train, validation, test.
std::vector<data::Dataset> load_splits(const PipelineConfig& config);

StudentMetrics evaluate_student(const nn::NetworkModel& student, const gate::UncertaintyGate& gate,
                                const data::Dataset& test, const attacks::AttackParams& attack);

DetectionMetrics detection_metrics(const dae::FilterOutcome& outcome,
                                   const attacks::PoisonReport& report,
                                   std::size_t flagged_at_initial, double initial_threshold);

/// Runs every stage and writes report.csv, loss_curves.csv,
/// filter_outcome.csv and poison_report.csv into output_dir.
ExperimentReport run_pipeline(const PipelineConfig& config);

Metrics report_rows(const PipelineConfig& config, const ExperimentReport& report);

void write_metrics(const std::filesystem::path& path, const Metrics& rows);
void write_loss_curves(const std::filesystem::path& path, const std::vector<LossCurve>& curves);

// Stage commands. Each writes its artifacts plus a <stage>_metrics.csv.
Metrics run_attack(const PipelineConfig& config);
Metrics run_train_dae(const PipelineConfig& config);
Metrics run_infer_threshold(const PipelineConfig& config);
Metrics run_filter(const PipelineConfig& config);
Metrics run_distill(const PipelineConfig& config);
Metrics run_evaluate(const PipelineConfig& config);

struct GradcheckOutcome {
  Metrics metrics;
  bool passed = false;
};
GradcheckOutcome run_gradcheck(const PipelineConfig& config);

}  // namespace distilshield::pipeline
