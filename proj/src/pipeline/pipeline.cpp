#include "distilshield/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <set>

#include "distilshield/checkpoint.hpp"
#include "distilshield/gradcheck.hpp"
#include "distilshield/quantile.hpp"
#include "distilshield/rng.hpp"

namespace distilshield::pipeline {

namespace fs = std::filesystem;

namespace {

std::string real(double v) { return format_real(v); }
std::string count(std::size_t v) { return std::to_string(v); }

template <typename Fn>
auto run_stage(const char* name, Fn&& fn) {
  try {
    return fn();
  } catch (const StageError&) {
    throw;
  } catch (const std::exception& e) {
    throw StageError(name, e.what());
  }
}

nn::TrainConfig read_train(const ConfigFile& f, const std::string& prefix, nn::TrainConfig base) {
  base.learning_rate = f.get_real(prefix + ".learning_rate", base.learning_rate);
  base.epochs = f.get_size(prefix + ".epochs", base.epochs);
  base.batch_size = f.get_size(prefix + ".batch_size", base.batch_size);
  return base;
}

attacks::AttackParams read_attack(const ConfigFile& f, const std::string& prefix,
                                  attacks::AttackParams base) {
  base.epsilon = f.get_real(prefix + ".epsilon", base.epsilon);
  base.alpha = f.get_real(prefix + ".alpha", base.alpha);
  base.num_iterations = f.get_size(prefix + ".iterations", base.num_iterations);
  base.clip_min = f.get_real(prefix + ".clip_min", base.clip_min);
  base.clip_max = f.get_real(prefix + ".clip_max", base.clip_max);
  base.projection = attacks::parse_projection_mode(
      f.get_string(prefix + ".projection", std::string(attacks::to_string(base.projection))));
  return base;
}

fs::path path_or(const fs::path& given, const fs::path& fallback) {
  return given.empty() ? fallback : given;
}

void require_file(const fs::path& path, const char* what) {
  if (!fs::exists(path)) throw IoError(std::string(what) + " not found: " + path.string());
}

nn::TrainResult train_classifier(const data::Dataset& train, const data::Dataset& validation,
                                 std::span<const std::size_t> hidden, const nn::TrainConfig& tc) {
  const nn::NetworkModel initial =
      nn::init_model(distill::classifier_specs(train.input_dim(), hidden, train.class_count),
                     train.class_count, derive_seed(tc.seed, "init"));
  return nn::train(initial, data::to_training_set(train), data::to_training_set(validation), tc,
                   nn::LossKind::cross_entropy);
}

dae::CorruptionSpec corruption_spec(const PipelineConfig& cfg, const nn::NetworkModel* model) {
  dae::CorruptionSpec spec;
  spec.mode = cfg.corruption;
  spec.noise_sigma = cfg.dae_noise_sigma;
  spec.attack = cfg.attack;
  spec.attack_model = model;
  spec.seed = derive_seed(cfg.seed, "dae-corruption");
  return spec;
}

dae::DaeArchitecture dae_architecture(const PipelineConfig& cfg, std::size_t input_dim) {
  dae::DaeArchitecture arch = dae::DaeArchitecture::for_input(input_dim);
  arch.hidden_dim = cfg.dae_hidden;
  arch.latent_dim = cfg.dae_latent;
  return arch;
}

struct DistillOutcome {
  nn::NetworkModel teacher;
  nn::NetworkModel student;
  gate::UncertaintyGate gate;
  distill::SoftLabeledDataset soft;
  double teacher_accuracy = 0.0;
  double teacher_loss = 0.0;
  std::vector<nn::EpochLoss> teacher_history;
  std::vector<nn::EpochLoss> student_history;
};

DistillOutcome distill_and_calibrate(const PipelineConfig& cfg, const data::Dataset& train,
                                     const data::Dataset& validation, const std::string& tag) {
  distill::DistillConfig dc = cfg.distill;
  dc.teacher.seed = derive_seed(cfg.seed, tag + "-teacher");
  dc.student.seed = derive_seed(cfg.seed, tag + "-student");
  DistillOutcome out;
  nn::TrainResult teacher = distill::train_teacher(train, validation, dc);
  out.teacher = std::move(teacher.model);
  out.teacher_history = std::move(teacher.history);
  out.teacher_loss = out.teacher_history.empty() ? 0.0 : out.teacher_history.back().train_loss;
  out.teacher_accuracy = distill::accuracy(out.teacher, train, dc.test_temperature);
  out.soft = distill::soft_labels(out.teacher, train, dc.train_temperature);
  const distill::SoftLabeledDataset soft_validation =
      distill::soft_labels(out.teacher, validation, dc.train_temperature);
  nn::TrainResult student = distill::train_student(out.soft, soft_validation, dc);
  out.student = std::move(student.model);
  out.student_history = std::move(student.history);
  out.gate = gate::calibrate_gate(out.student, train, cfg.significance, cfg.dropout_rate,
                                  cfg.mc_samples, derive_seed(cfg.seed, tag + "-gate"));
  return out;
}

void add_outcome(OutcomeRates& rates, const gate::GatedPrediction& p, std::size_t label) {
  if (!p.verdict) {
    rates.null += 1.0;
  } else if (*p.verdict == label) {
    rates.correct += 1.0;
  } else {
    rates.wrong += 1.0;
  }
}

void normalise(OutcomeRates& rates, std::size_t n) {
  const double d = static_cast<double>(n);
  rates.correct /= d;
  rates.wrong /= d;
  rates.null /= d;
}

void add_rates(Metrics& rows, const std::string& prefix, const OutcomeRates& r) {
  rows.emplace_back(prefix + ".correct", real(r.correct));
  rows.emplace_back(prefix + ".wrong", real(r.wrong));
  rows.emplace_back(prefix + ".null", real(r.null));
}

void add_student(Metrics& rows, const std::string& prefix, const StudentMetrics& s) {
  rows.emplace_back(prefix + ".clean_accuracy", real(s.clean_accuracy));
  add_rates(rows, prefix + ".clean_gated", s.clean);
  rows.emplace_back(prefix + ".robust_accuracy_fgsm", real(s.robust_accuracy_fgsm()));
  rows.emplace_back(prefix + ".robust_accuracy_ifgsm", real(s.robust_accuracy_ifgsm()));
  add_rates(rows, prefix + ".fgsm", s.fgsm);
  add_rates(rows, prefix + ".ifgsm", s.ifgsm);
  rows.emplace_back(prefix + ".fgsm_ungated_accuracy", real(s.fgsm_ungated_accuracy));
  rows.emplace_back(prefix + ".ifgsm_ungated_accuracy", real(s.ifgsm_ungated_accuracy));
}

void add_config(Metrics& rows, const PipelineConfig& c) {
  rows.emplace_back("config.seed", std::to_string(c.seed));
  rows.emplace_back("config.poison.fraction", real(c.poison_fraction));
  rows.emplace_back("config.poison.kind", std::string(attacks::to_string(c.poison_kind)));
  rows.emplace_back("config.attack.epsilon", real(c.attack.epsilon));
  rows.emplace_back("config.attack.alpha", real(c.attack.alpha));
  rows.emplace_back("config.attack.iterations", count(c.attack.num_iterations));
  rows.emplace_back("config.attack.projection", std::string(attacks::to_string(c.attack.projection)));
  rows.emplace_back("config.distill.train_temperature", real(c.distill.train_temperature));
  rows.emplace_back("config.distill.test_temperature", real(c.distill.test_temperature));
  rows.emplace_back("config.dae.target_fraction", real(c.target_fraction));
  rows.emplace_back("config.gate.significance", real(c.significance));
  rows.emplace_back("config.gate.dropout_rate", real(c.dropout_rate));
  rows.emplace_back("config.gate.mc_samples", count(c.mc_samples));
  // Architectures and epoch counts are local defaults.
  rows.emplace_back("config.defaults_note", "architectures and epochs are configured defaults");
}

data::Dataset stage_dataset(const PipelineConfig& cfg, std::size_t split_index) {
  if (!cfg.input_images.empty() || !cfg.input_labels.empty()) {
    if (cfg.input_images.empty() || cfg.input_labels.empty()) {
      throw ConfigError("input.images and input.labels must be given together");
    }
    require_file(cfg.input_images, "input images");
    require_file(cfg.input_labels, "input labels");
    return data::load_idx(cfg.input_images, cfg.input_labels);
  }
  return load_splits(cfg).at(split_index);
}

gate::UncertaintyGate identity_gate(std::size_t classes) {
  gate::UncertaintyGate g;
  g.class_prototypes.assign(classes, std::vector<double>(classes, 1.0 / static_cast<double>(classes)));
  g.dropout_rate = 0.0;
  g.mc_samples = 1;
  return gate::with_infinite_cutoff(g);
}

}  // namespace

StageError::StageError(std::string stage, const std::string& message)
    : Error("[" + stage + "] " + message), stage_(std::move(stage)) {}

PipelineConfig PipelineConfig::from_config(const ConfigFile& f) {
  PipelineConfig c;
  c.seed = f.get_u64("seed", c.seed);
  c.output_dir = f.get_string("output.dir", c.output_dir.string());

  const std::string source = f.get_string("data.source", "synthetic");
  if (source == "synthetic") {
    c.source = DataSource::synthetic;
  } else if (source == "idx") {
    c.source = DataSource::idx;
  } else {
    throw ConfigError("data.source must be 'synthetic' or 'idx'");
  }
  c.images_path = f.get_string("data.images", "");
  c.labels_path = f.get_string("data.labels", "");
  c.synthetic.image_side = f.get_size("data.image_side", c.synthetic.image_side);
  c.synthetic.class_count = f.get_size("data.class_count", c.synthetic.class_count);
  c.synthetic.samples_per_class = f.get_size("data.samples_per_class", c.synthetic.samples_per_class);
  c.synthetic.noise_sigma = f.get_real("data.noise_sigma", c.synthetic.noise_sigma);
  c.split = f.get_reals("split.fractions", c.split);

  c.classifier_hidden = f.get_sizes("model.hidden", c.classifier_hidden);
  c.surrogate = read_train(f, "surrogate", c.surrogate);

  c.poison_fraction = f.get_real("poison.fraction", c.poison_fraction);
  c.poison_kind = attacks::parse_attack_kind(
      f.get_string("poison.kind", std::string(attacks::to_string(c.poison_kind))));
  c.attack = read_attack(f, "attack", c.attack);

  c.dae_hidden = f.get_size("dae.hidden", c.dae_hidden);
  c.dae_latent = f.get_size("dae.latent", c.dae_latent);
  c.dae_train = read_train(f, "dae", c.dae_train);
  c.corruption = dae::parse_corruption_mode(
      f.get_string("dae.corruption", std::string(dae::to_string(c.corruption))));
  c.dae_noise_sigma = f.get_real("dae.noise_sigma", c.dae_noise_sigma);
  c.target_fraction = f.get_real("dae.target_fraction", c.target_fraction);
  c.initial_threshold = f.get_real("dae.initial_threshold", c.initial_threshold);
  c.pass_mode = dae::parse_pass_mode(
      f.get_string("dae.pass_mode", std::string(dae::to_string(c.pass_mode))));

  c.distill.train_temperature = f.get_real("distill.train_temperature", c.distill.train_temperature);
  c.distill.test_temperature = f.get_real("distill.test_temperature", c.distill.test_temperature);
  c.distill.hidden = c.classifier_hidden;
  c.distill.teacher = read_train(f, "teacher", c.distill.teacher);
  c.distill.student = read_train(f, "student", c.distill.student);

  c.significance = f.get_real("gate.significance", c.significance);
  c.dropout_rate = f.get_real("gate.dropout_rate", c.dropout_rate);
  c.mc_samples = f.get_size("gate.mc_samples", c.mc_samples);

  c.eval_attack = read_attack(f, "eval", c.eval_attack);
  c.ablation = f.get_bool("pipeline.ablation", c.ablation);

  c.input_images = f.get_string("input.images", "");
  c.input_labels = f.get_string("input.labels", "");
  c.input_model = f.get_string("input.model", "");
  c.input_dae = f.get_string("input.dae", "");
  c.input_threshold = f.get_string("input.threshold", "");
  c.input_student = f.get_string("input.student", "");
  c.input_gate = f.get_string("input.gate", "");
  c.gradcheck_trials = f.get_size("gradcheck.trials", c.gradcheck_trials);

  if (const std::vector<std::string> unknown = f.unused_keys(); !unknown.empty()) {
    std::string list;
    for (const std::string& k : unknown) list += (list.empty() ? "" : ", ") + k;
    throw ConfigError("unknown config keys: " + list);
  }
  c.validate();
  return c;
}

void PipelineConfig::validate() const {
  try {
    if (source == DataSource::synthetic) synthetic.validate();
    if (source == DataSource::idx && (images_path.empty() || labels_path.empty())) {
      throw ConfigError("data.source = idx needs data.images and data.labels");
    }
    if (split.size() != 4) throw ConfigError("split.fractions needs four parts: dae,train,validation,test");
    data::split_sizes(100, split);
    surrogate.validate();
    if (!(poison_fraction >= 0.0 && poison_fraction <= 1.0)) {
      throw ConfigError("poison.fraction must be in [0, 1]");
    }
    attack.validate();
    eval_attack.validate();
    dae_train.validate();
    if (dae_hidden == 0 || dae_latent == 0) throw ConfigError("dae.hidden and dae.latent must be positive");
    if (!(target_fraction > 0.0 && target_fraction < 1.0)) {
      throw ConfigError("dae.target_fraction must be in (0, 1)");
    }
    if (!(initial_threshold >= 0.0)) throw ConfigError("dae.initial_threshold must be nonnegative");
    distill.validate();
    if (!(significance > 0.0 && significance < 1.0)) throw ConfigError("gate.significance must be in (0, 1)");
    if (!(dropout_rate >= 0.0 && dropout_rate < 1.0)) throw ConfigError("gate.dropout_rate must be in [0, 1)");
    if (mc_samples == 0) throw ConfigError("gate.mc_samples must be positive");
  } catch (const ConfigError&) {
    throw;
  } catch (const Error& e) {
    throw ConfigError(e.what());
  }
}

std::vector<data::Dataset> load_splits(const PipelineConfig& config) {
  data::Dataset all;
  if (config.source == DataSource::synthetic) {
    data::SyntheticSpec spec = config.synthetic;
    spec.seed = derive_seed(config.seed, "data");
    all = data::generate_synthetic(spec);
  } else {
    require_file(config.images_path, "data.images");
    require_file(config.labels_path, "data.labels");
    all = data::load_idx(config.images_path, config.labels_path);
  }
  return data::split(all, config.split, derive_seed(config.seed, "split"));
}

StudentMetrics evaluate_student(const nn::NetworkModel& student, const gate::UncertaintyGate& gate,
                                const data::Dataset& test, const attacks::AttackParams& attack) {
  if (test.empty()) throw InputError("evaluation set is empty");
  StudentMetrics m;
  std::size_t clean_correct = 0;
  std::size_t fgsm_correct = 0;
  std::size_t ifgsm_correct = 0;
  for (std::size_t i = 0; i < test.size(); ++i) {
    const std::span<const double> x = test.images[i].values();
    const std::size_t label = test.labels[i];
    if (distill::predict(student, x).label == label) ++clean_correct;
    add_outcome(m.clean, gate::gated_predict(student, gate, x), label);

    const std::vector<double> fgsm = attacks::fgsm(student, x, label, attack);
    if (distill::predict(student, fgsm).label == label) ++fgsm_correct;
    add_outcome(m.fgsm, gate::gated_predict(student, gate, fgsm), label);

    const std::vector<double> ifgsm = attacks::ifgsm(student, x, label, attack);
    if (distill::predict(student, ifgsm).label == label) ++ifgsm_correct;
    add_outcome(m.ifgsm, gate::gated_predict(student, gate, ifgsm), label);
  }
  const double n = static_cast<double>(test.size());
  m.clean_accuracy = static_cast<double>(clean_correct) / n;
  m.fgsm_ungated_accuracy = static_cast<double>(fgsm_correct) / n;
  m.ifgsm_ungated_accuracy = static_cast<double>(ifgsm_correct) / n;
  normalise(m.clean, test.size());
  normalise(m.fgsm, test.size());
  normalise(m.ifgsm, test.size());
  return m;
}

DetectionMetrics detection_metrics(const dae::FilterOutcome& outcome,
                                   const attacks::PoisonReport& report,
                                   std::size_t flagged_at_initial, double initial_threshold) {
  const std::set<std::size_t> poisoned(report.poisoned_indices.begin(),
                                       report.poisoned_indices.end());
  DetectionMetrics d;
  d.initial_threshold = initial_threshold;
  d.flagged_at_initial = flagged_at_initial;
  d.inferred_threshold = outcome.threshold;
  d.discarded = outcome.discarded_indices.size();
  d.kept = outcome.kept_indices.size();
  std::size_t true_positive = 0;
  for (const std::size_t i : outcome.discarded_indices) true_positive += poisoned.count(i);
  // No flags means no false positives; no poisons means nothing to miss.
  d.precision = d.discarded == 0 ? 1.0 : static_cast<double>(true_positive) / static_cast<double>(d.discarded);
  d.recall = poisoned.empty() ? 1.0 : static_cast<double>(true_positive) / static_cast<double>(poisoned.size());
  double clean_sum = 0.0;
  double adv_sum = 0.0;
  for (std::size_t i = 0; i < outcome.per_example_error.size(); ++i) {
    (poisoned.count(i) ? adv_sum : clean_sum) += outcome.per_example_error[i];
  }
  const std::size_t clean_n = outcome.per_example_error.size() - poisoned.size();
  d.mean_error_clean = clean_n == 0 ? 0.0 : clean_sum / static_cast<double>(clean_n);
  d.mean_error_adversarial = poisoned.empty() ? 0.0 : adv_sum / static_cast<double>(poisoned.size());
  return d;
}

void write_metrics(const fs::path& path, const Metrics& rows) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  out << "metric,value\n";
  for (const auto& [name, value] : rows) out << name << ',' << value << '\n';
  if (!out) throw IoError("write failed for " + path.string());
}

void write_loss_curves(const fs::path& path, const std::vector<LossCurve>& curves) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  out << "stage,epoch,train_loss,val_loss\n";
  for (const LossCurve& curve : curves) {
    for (const nn::EpochLoss& e : curve.history) {
      out << curve.stage << ',' << e.epoch << ',' << real(e.train_loss) << ','
          << (std::isnan(e.val_loss) ? std::string() : real(e.val_loss)) << '\n';
    }
  }
  if (!out) throw IoError("write failed for " + path.string());
}

Metrics report_rows(const PipelineConfig& config, const ExperimentReport& r) {
  Metrics rows;
  add_config(rows, config);
  rows.emplace_back("data.dae_examples", count(r.dae_examples));
  rows.emplace_back("data.train_examples", count(r.train_examples));
  rows.emplace_back("data.test_examples", count(r.test_examples));
  rows.emplace_back("poison.count", count(r.poisoned));
  rows.emplace_back("poison.mean_linf", real(r.poison_mean_linf));
  rows.emplace_back("surrogate.accuracy", real(r.surrogate_accuracy));
  rows.emplace_back("dae.initial_threshold", real(r.detection.initial_threshold));
  rows.emplace_back("dae.flagged_at_initial_threshold", count(r.detection.flagged_at_initial));
  rows.emplace_back("dae.inferred_threshold", real(r.detection.inferred_threshold));
  rows.emplace_back("dae.mean_error_clean", real(r.detection.mean_error_clean));
  rows.emplace_back("dae.mean_error_adversarial", real(r.detection.mean_error_adversarial));
  rows.emplace_back("dae.precision", real(r.detection.precision));
  rows.emplace_back("dae.recall", real(r.detection.recall));
  rows.emplace_back("dae.discarded", count(r.detection.discarded));
  rows.emplace_back("dae.kept", count(r.detection.kept));
  rows.emplace_back("teacher.accuracy", real(r.teacher_accuracy));
  rows.emplace_back("teacher.loss", real(r.teacher_loss));
  add_student(rows, "student", r.student);
  if (r.ablation_ran) {
    rows.emplace_back("ablation.teacher.accuracy", real(r.ablation_teacher_accuracy));
    add_student(rows, "ablation.student", r.ablation);
    rows.emplace_back("ablation.robust_improvement_fgsm",
                      real(r.student.robust_accuracy_fgsm() - r.ablation.robust_accuracy_fgsm()));
  }
  return rows;
}

ExperimentReport run_pipeline(const PipelineConfig& cfg) {
  cfg.validate();
  fs::create_directories(cfg.output_dir);
  ExperimentReport report;
  const fs::path curves_path = cfg.output_dir / "loss_curves.csv";
  auto flush_curves = [&] { write_loss_curves(curves_path, report.loss_curves); };

  const std::vector<data::Dataset> parts = run_stage("data", [&] { return load_splits(cfg); });
  const data::Dataset& dae_set = parts[0];
  const data::Dataset& train_set = parts[1];
  const data::Dataset& validation = parts[2];
  const data::Dataset& test = parts[3];
  report.dae_examples = dae_set.size();
  report.train_examples = train_set.size();
  report.test_examples = test.size();

  const nn::NetworkModel surrogate = run_stage("surrogate", [&] {
    nn::TrainConfig tc = cfg.surrogate;
    tc.seed = derive_seed(cfg.seed, "surrogate");
    nn::TrainResult trained = train_classifier(train_set, validation, cfg.classifier_hidden, tc);
    report.loss_curves.push_back({"surrogate", trained.history});
    flush_curves();
    save_checkpoints(cfg.output_dir / "surrogate.model", {{"surrogate", 1.0, trained.model}});
    return trained.model;
  });
  report.surrogate_accuracy = distill::accuracy(surrogate, test);

  auto [poisoned_train, poison_report] = run_stage("poison", [&] {
    auto result = attacks::poison_dataset(train_set, surrogate, cfg.attack, cfg.poison_fraction,
                                          cfg.poison_kind, derive_seed(cfg.seed, "poison"));
    attacks::write_poison_report(cfg.output_dir / "poison_report.csv", result.second);
    return result;
  });
  report.poisoned = poison_report.poisoned_indices.size();
  report.poison_mean_linf = poison_report.mean_linf;

  const dae::DaeModel dae_model = run_stage("train-dae", [&] {
    nn::TrainConfig tc = cfg.dae_train;
    tc.seed = derive_seed(cfg.seed, "dae-train");
    dae::TrainResult trained = dae::train_dae(
        dae::init_dae(dae_architecture(cfg, dae_set.input_dim()), derive_seed(cfg.seed, "dae-init")),
        dae_set, validation, tc, corruption_spec(cfg, &surrogate));
    report.loss_curves.push_back({"dae", trained.history});
    flush_curves();
    dae::save_dae(cfg.output_dir / "dae.model", trained.model);
    return trained.model;
  });

  const dae::FilterOutcome outcome = run_stage("filter", [&] {
    const std::vector<double> errors = dae::reconstruction_errors(dae_model, poisoned_train);
    const dae::Threshold initial = dae::initial_threshold(cfg.initial_threshold);
    const std::size_t flagged_initial = count_above(errors, initial.value);
    const dae::Threshold inferred = dae::infer_threshold_from_scores(errors, cfg.target_fraction);
    dae::save_threshold(cfg.output_dir / "threshold.txt", inferred);
    dae::FilterOutcome result = dae::filter_dataset(dae_model, poisoned_train, inferred, cfg.pass_mode);
    dae::write_filter_outcome(cfg.output_dir / "filter_outcome.csv", result);
    report.detection = detection_metrics(result, poison_report, flagged_initial, initial.value);
    return result;
  });

  const DistillOutcome filtered = run_stage("distill", [&] {
    DistillOutcome d = distill_and_calibrate(cfg, outcome.kept, validation, "filtered");
    report.loss_curves.push_back({"teacher", d.teacher_history});
    report.loss_curves.push_back({"student", d.student_history});
    flush_curves();
    save_checkpoints(cfg.output_dir / "teacher.model",
                     {{"teacher", cfg.distill.train_temperature, d.teacher}});
    save_checkpoints(cfg.output_dir / "student.model",
                     {{"student", cfg.distill.train_temperature, d.student}});
    gate::save_gate(cfg.output_dir / "gate.txt", d.gate);
    return d;
  });
  report.teacher_accuracy = filtered.teacher_accuracy;
  report.teacher_loss = filtered.teacher_loss;

  report.student = run_stage("evaluate", [&] {
    return evaluate_student(filtered.student, filtered.gate, test, cfg.eval_attack);
  });

  if (cfg.ablation) {
    run_stage("ablation", [&] {
      const DistillOutcome plain = distill_and_calibrate(cfg, poisoned_train, validation, "ablation");
      report.loss_curves.push_back({"ablation-teacher", plain.teacher_history});
      report.loss_curves.push_back({"ablation-student", plain.student_history});
      flush_curves();
      report.ablation_teacher_accuracy = plain.teacher_accuracy;
      report.ablation = evaluate_student(plain.student, plain.gate, test, cfg.eval_attack);
      report.ablation_ran = true;
      return 0;
    });
  }

  run_stage("report", [&] {
    write_metrics(cfg.output_dir / "report.csv", report_rows(cfg, report));
    return 0;
  });
  return report;
}

Metrics run_attack(const PipelineConfig& cfg) {
  fs::create_directories(cfg.output_dir);
  const fs::path model_path = path_or(cfg.input_model, cfg.output_dir / "surrogate.model");
  require_file(model_path, "attack model");
  const nn::NetworkModel model = load_checkpoint(model_path).model;
  const data::Dataset dataset = stage_dataset(cfg, 1);
  auto [poisoned, report] = attacks::poison_dataset(dataset, model, cfg.attack, cfg.poison_fraction,
                                                    cfg.poison_kind, derive_seed(cfg.seed, "poison"));
  data::save_idx(poisoned, cfg.output_dir / "poisoned-images.idx",
                 cfg.output_dir / "poisoned-labels.idx", data::PixelEncoding::f64);
  data::write_manifest(cfg.output_dir / "manifest.csv", poisoned, report.poisoned_indices);
  attacks::write_poison_report(cfg.output_dir / "poison_report.csv", report);
  Metrics rows;
  add_config(rows, cfg);
  rows.emplace_back("attack.examples", count(dataset.size()));
  rows.emplace_back("attack.poisoned", count(report.poisoned_indices.size()));
  rows.emplace_back("attack.mean_linf", real(report.mean_linf));
  write_metrics(cfg.output_dir / "attack_metrics.csv", rows);
  return rows;
}

Metrics run_train_dae(const PipelineConfig& cfg) {
  fs::create_directories(cfg.output_dir);
  const data::Dataset clean = stage_dataset(cfg, 0);
  const data::Dataset validation =
      cfg.input_images.empty() ? load_splits(cfg).at(2) : data::Dataset{{}, {}, clean.class_count};
  std::optional<nn::NetworkModel> attack_model;
  if (cfg.corruption != dae::CorruptionMode::noise) {
    if (!cfg.input_model.empty()) {
      require_file(cfg.input_model, "attack model");
      attack_model = load_checkpoint(cfg.input_model).model;
    } else {
      nn::TrainConfig tc = cfg.surrogate;
      tc.seed = derive_seed(cfg.seed, "dae-reference");
      attack_model = train_classifier(clean, validation, cfg.classifier_hidden, tc).model;
    }
  }
  nn::TrainConfig tc = cfg.dae_train;
  tc.seed = derive_seed(cfg.seed, "dae-train");
  const dae::TrainResult trained = dae::train_dae(
      dae::init_dae(dae_architecture(cfg, clean.input_dim()), derive_seed(cfg.seed, "dae-init")),
      clean, validation, tc, corruption_spec(cfg, attack_model ? &*attack_model : nullptr));
  dae::save_dae(cfg.output_dir / "dae.model", trained.model);
  write_loss_curves(cfg.output_dir / "loss_curves.csv", {{"dae", trained.history}});
  const std::vector<double> errors = dae::reconstruction_errors(trained.model, clean);
  double mean = 0.0;
  for (const double e : errors) mean += e;
  Metrics rows;
  rows.emplace_back("dae.examples", count(clean.size()));
  rows.emplace_back("dae.epochs", count(trained.history.size()));
  rows.emplace_back("dae.final_train_loss",
                    real(trained.history.empty() ? 0.0 : trained.history.back().train_loss));
  rows.emplace_back("dae.mean_error_train", real(mean / static_cast<double>(errors.size())));
  write_metrics(cfg.output_dir / "train_dae_metrics.csv", rows);
  return rows;
}

Metrics run_infer_threshold(const PipelineConfig& cfg) {
  fs::create_directories(cfg.output_dir);
  const fs::path dae_path = path_or(cfg.input_dae, cfg.output_dir / "dae.model");
  require_file(dae_path, "DAE checkpoint");
  const dae::DaeModel model = dae::load_dae(dae_path);
  const data::Dataset reference = stage_dataset(cfg, 1);
  const std::vector<double> errors = dae::reconstruction_errors(model, reference);
  const dae::Threshold t = dae::infer_threshold_from_scores(errors, cfg.target_fraction);
  dae::save_threshold(cfg.output_dir / "threshold.txt", t);
  Metrics rows;
  rows.emplace_back("threshold.target_fraction", real(cfg.target_fraction));
  rows.emplace_back("threshold.reference_size", count(reference.size()));
  rows.emplace_back("threshold.initial", real(cfg.initial_threshold));
  rows.emplace_back("threshold.flagged_at_initial", count(count_above(errors, cfg.initial_threshold)));
  rows.emplace_back("threshold.value", real(t.value));
  rows.emplace_back("threshold.flagged", count(count_above(errors, t.value)));
  write_metrics(cfg.output_dir / "infer_threshold_metrics.csv", rows);
  return rows;
}

Metrics run_filter(const PipelineConfig& cfg) {
  fs::create_directories(cfg.output_dir);
  const fs::path dae_path = path_or(cfg.input_dae, cfg.output_dir / "dae.model");
  const fs::path threshold_path = path_or(cfg.input_threshold, cfg.output_dir / "threshold.txt");
  require_file(dae_path, "DAE checkpoint");
  require_file(threshold_path, "threshold file");
  const dae::DaeModel model = dae::load_dae(dae_path);
  const dae::Threshold threshold = dae::load_threshold(threshold_path);
  const data::Dataset dataset = stage_dataset(cfg, 1);
  const dae::FilterOutcome outcome = dae::filter_dataset(model, dataset, threshold, cfg.pass_mode);
  dae::write_filter_outcome(cfg.output_dir / "filter_outcome.csv", outcome);
  if (!outcome.kept.empty()) {
    data::save_idx(outcome.kept, cfg.output_dir / "filtered-images.idx",
                   cfg.output_dir / "filtered-labels.idx", data::PixelEncoding::f64);
  }
  Metrics rows;
  rows.emplace_back("filter.threshold", real(threshold.value));
  rows.emplace_back("filter.input", count(dataset.size()));
  rows.emplace_back("filter.kept", count(outcome.kept_indices.size()));
  rows.emplace_back("filter.discarded", count(outcome.discarded_indices.size()));
  rows.emplace_back("filter.pass_mode", std::string(dae::to_string(cfg.pass_mode)));
  write_metrics(cfg.output_dir / "filter_metrics.csv", rows);
  return rows;
}

Metrics run_distill(const PipelineConfig& cfg) {
  fs::create_directories(cfg.output_dir);
  const data::Dataset train = stage_dataset(cfg, 1);
  const data::Dataset validation =
      cfg.input_images.empty() ? load_splits(cfg).at(2) : data::Dataset{{}, {}, train.class_count};
  const DistillOutcome d = distill_and_calibrate(cfg, train, validation, "filtered");
  save_checkpoints(cfg.output_dir / "teacher.model",
                   {{"teacher", cfg.distill.train_temperature, d.teacher}});
  save_checkpoints(cfg.output_dir / "student.model",
                   {{"student", cfg.distill.train_temperature, d.student}});
  gate::save_gate(cfg.output_dir / "gate.txt", d.gate);
  distill::write_soft_labels(cfg.output_dir / "soft_labels.csv", d.soft);
  write_loss_curves(cfg.output_dir / "loss_curves.csv",
                    {{"teacher", d.teacher_history}, {"student", d.student_history}});
  Metrics rows;
  rows.emplace_back("distill.examples", count(train.size()));
  rows.emplace_back("distill.teacher_accuracy", real(d.teacher_accuracy));
  rows.emplace_back("distill.teacher_loss", real(d.teacher_loss));
  rows.emplace_back("distill.student_accuracy", real(distill::accuracy(d.student, train)));
  rows.emplace_back("distill.gate_cutoff", real(d.gate.kl_cutoff));
  write_metrics(cfg.output_dir / "distill_metrics.csv", rows);
  return rows;
}

Metrics run_evaluate(const PipelineConfig& cfg) {
  fs::create_directories(cfg.output_dir);
  const fs::path student_path = path_or(cfg.input_student, cfg.output_dir / "student.model");
  require_file(student_path, "student checkpoint");
  const nn::NetworkModel student = load_checkpoint(student_path).model;
  gate::UncertaintyGate g;
  if (cfg.input_gate == "identity") {
    g = identity_gate(student.output_classes);
  } else {
    const fs::path gate_path = path_or(cfg.input_gate, cfg.output_dir / "gate.txt");
    require_file(gate_path, "gate file");
    g = gate::load_gate(gate_path);
  }
  const data::Dataset test = stage_dataset(cfg, 3);
  const StudentMetrics m = evaluate_student(student, g, test, cfg.eval_attack);
  Metrics rows;
  rows.emplace_back("evaluate.examples", count(test.size()));
  rows.emplace_back("evaluate.null_rate", real(m.clean.null));
  add_student(rows, "evaluate", m);
  write_metrics(cfg.output_dir / "evaluate_metrics.csv", rows);
  return rows;
}

GradcheckOutcome run_gradcheck(const PipelineConfig& cfg) {
  fs::create_directories(cfg.output_dir);
  constexpr double kTolerance = 1e-4;
  GradcheckOutcome out;
  Rng rng(derive_seed(cfg.seed, "gradcheck"));
  std::uniform_real_distribution<double> pixel(0.0, 1.0);
  const std::size_t input_dim = cfg.synthetic.image_side * cfg.synthetic.image_side;
  const std::size_t classes = cfg.synthetic.class_count;
  std::vector<double> x(input_dim);
  for (double& v : x) v = pixel(rng);

  const nn::NetworkModel classifier = nn::init_model(
      distill::classifier_specs(input_dim, cfg.classifier_hidden, classes), classes, rng());
  std::vector<double> soft(classes);
  double total = 0.0;
  for (double& v : soft) total += (v = pixel(rng) + 0.1);
  for (double& v : soft) v /= total;

  gradcheck::Result worst;
  for (const double temperature : {1.0, cfg.distill.train_temperature}) {
    const gradcheck::Result r =
        gradcheck::check(classifier, x, soft, temperature, nn::LossKind::cross_entropy);
    out.metrics.emplace_back("classifier_ce_T" + real(temperature), real(r.max_relative_error));
    worst.merge(r);
  }
  const dae::DaeModel dae_model =
      dae::init_dae(dae_architecture(cfg, input_dim), derive_seed(cfg.seed, "gradcheck-dae"));
  nn::NetworkModel stacked;
  stacked.layers = dae_model.encoder.layers;
  stacked.layers.insert(stacked.layers.end(), dae_model.decoder.layers.begin(),
                        dae_model.decoder.layers.end());
  const gradcheck::Result dae_result = gradcheck::check(stacked, x, x, 1.0, nn::LossKind::mse);
  out.metrics.emplace_back("dae_mse", real(dae_result.max_relative_error));
  worst.merge(dae_result);

  gradcheck::SuiteConfig suite;
  suite.trials = cfg.gradcheck_trials;
  suite.seed = derive_seed(cfg.seed, "gradcheck-suite");
  const gradcheck::Result random = gradcheck::random_suite(suite);
  out.metrics.emplace_back("random_suite", real(random.max_relative_error));
  worst.merge(random);

  out.metrics.emplace_back("max_relative_error", real(worst.max_relative_error));
  out.metrics.emplace_back("checked", count(worst.checked));
  out.metrics.emplace_back("skipped_kinks", count(worst.skipped));
  out.metrics.emplace_back("tolerance", real(kTolerance));
  out.passed = worst.passed(kTolerance);
  out.metrics.emplace_back("passed", out.passed ? "1" : "0");
  write_metrics(cfg.output_dir / "gradcheck.csv", out.metrics);
  return out;
}

}  // namespace distilshield::pipeline
