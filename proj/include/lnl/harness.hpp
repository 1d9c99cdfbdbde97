#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "lnl/datagen.hpp"
#include "lnl/model.hpp"
#include "lnl/trainer.hpp"
#include "lnl/transition.hpp"

namespace lnl {

// Declaration order is the reporting order.
enum class Method : std::uint8_t { baseline, forward, reweight, anchor_estimate, revision_alpha, revision_softmax };

const char* method_name(Method method);
Method parse_method(const std::string& name);

struct DatasetSource {
  enum class Kind : std::uint8_t { blobs, files };
  Kind kind = Kind::blobs;
  std::string name = "blobs";
  // blobs
  std::size_t classes = 4;
  std::size_t dim = 16;
  std::size_t n_per_class = 2500;
  double separation = kDefaultSeparation;  // pairwise mean distance in units of sigma
  double sigma = 1.0;
  double test_fraction = 0.2;
  // files; the test file is scored against its clean labels
  std::filesystem::path train_path;
  std::filesystem::path test_path;
};

struct ExperimentConfig {
  DatasetSource dataset;
  // Ground truth used to inject noise into blobs and to score estimates.
  std::optional<TransitionMatrix> true_t;
  // Correction matrix for forward/reweight when no ground truth is known.
  std::optional<TransitionMatrix> prior_t;
  std::vector<Method> methods = {Method::baseline, Method::forward, Method::reweight};
  std::size_t trials = 10;
  std::uint64_t master_seed = 0;
  std::vector<std::size_t> hidden_dims = {64, 32};
  double dropout_rate = 0.2;
  TrainConfig train;
  TrainConfig revision = TrainConfig::revision_defaults();
  double alpha = 0.01;
  AnchorSettings anchor;
  bool beta_stop_gradient = false;
  // Revision starts from the element-wise mean of the per-trial anchor
  // estimates rather than each trial's own estimate.
  bool average_anchor_for_revision = true;
  // Divide alpha-revised rows by their sums before scoring.
  bool renormalize_alpha = false;
  // When false, true_t/prior_t are used as given even if not row-stochastic.
  bool validate_matrices = true;
  std::filesystem::path output_dir = "results";
  std::size_t workers = 1;
  bool fail_fast = false;

  void check() const;
  bool wants(Method m) const;
};

// JSON config; relative paths resolve against `base_dir`.
ExperimentConfig parse_experiment_config(const std::string& json_text, const std::filesystem::path& base_dir = {});
ExperimentConfig load_experiment_config(const std::filesystem::path& path);
std::string experiment_config_json(const ExperimentConfig& config);

struct TrialResult {
  Method method;
  std::string dataset;
  std::uint64_t seed;
  double test_loss;
  double test_accuracy;  // percent
  std::optional<double> rre;
  double wall_time_seconds = 0.0;
  std::optional<Tensor> matrix;
  std::vector<std::pair<std::string, TrainHistory>> histories;
};

struct TrialFailure {
  Method method;
  std::uint64_t seed;
  std::string message;
};

struct ExperimentRun {
  std::vector<TrialResult> results;  // sorted by (method, seed)
  std::vector<TrialFailure> failures;
  std::optional<TransitionMatrix> true_t;
};

// Train/test data as materialised for an experiment.
struct ExperimentData {
  LabeledDataset pool;  // noisy training pool, resplit per trial
  LabeledDataset test;  // clean labels
};

ExperimentData prepare_data(const ExperimentConfig& config);

// Per-trial seed is master_seed + trial index. Failures are collected unless
// fail_fast is set, in which case the first one is rethrown.
ExperimentRun run_experiment(const ExperimentConfig& config);
ExperimentRun run_experiment(const ExperimentConfig& config, const ExperimentData& data);

struct MethodSummary {
  Method method;
  std::size_t n = 0;
  double loss_mean = 0.0;
  double loss_std = 0.0;
  double acc_mean = 0.0;
  double acc_std = 0.0;
  std::optional<double> rre_mean;
  std::optional<double> rre_std;
  std::optional<double> mean_matrix_rre;
  std::optional<Tensor> mean_matrix;
};

struct ExperimentSummary {
  std::vector<MethodSummary> methods;
  const MethodSummary* find(Method m) const;
};

// Sample mean and standard deviation (n - 1 divisor; 0 when n = 1).
double sample_mean(const std::vector<double>& values);
double sample_std(const std::vector<double>& values);

// Groups by method in reporting order. Mean-matrix RRE needs `true_t` and
// per-trial matrices.
ExperimentSummary aggregate(const std::vector<TrialResult>& results, const std::optional<TransitionMatrix>& true_t);

}  // namespace lnl
