#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <limits>
#include <map>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "lnl/datagen.hpp"
#include "lnl/losses.hpp"
#include "lnl/model.hpp"
#include "lnl/tape.hpp"
#include "lnl/transition.hpp"

namespace lnl {

struct AdamHyper {
  double learning_rate = 5e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

struct AdamState {
  AdamHyper hyper;
  std::uint64_t step = 0;
  std::map<std::string, Tensor> first_moment;
  std::map<std::string, Tensor> second_moment;
};

struct NamedTensor {
  std::string name;
  Tensor* value;
};

// One Adam update over every named tensor. The step counter advances once
// per call, before bias correction. Moments start at zero for unseen names.
void adam_step(AdamState& state, std::span<const NamedTensor> params, const GradientMap& grads);

struct TrainConfig {
  std::size_t epochs = 100;
  std::size_t batch_size = 32;
  double learning_rate = 5e-4;
  std::size_t patience = 10;
  std::uint64_t seed = 0;
  bool dropout = true;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;

  // Fine-tuning defaults for the slack-matrix stage: batch 256, lr 1e-4.
  // At the nominal 5e-7 a small MLP barely moves.
  static TrainConfig revision_defaults();

  void check(bool allow_zero_epochs = false) const;
};

struct EpochRecord {
  std::size_t epoch;  // 1-based
  double train_loss;
  double val_loss;
  double val_accuracy;  // percent, against noisy validation labels
};

struct TrainHistory {
  std::vector<EpochRecord> epochs;
  std::size_t best_epoch = 0;
  std::size_t stop_epoch = 0;
  std::vector<double> batch_losses;

  // epoch,train_loss,val_loss,val_acc
  void write_csv(const std::filesystem::path& path) const;
};

// Tracks validation losses; stops once `patience` consecutive epochs fail to
// improve on the best loss so far.
class EarlyStopping {
 public:
  explicit EarlyStopping(std::size_t patience) : patience_(patience) {}

  // Returns true when val_loss is a new best.
  bool observe(double val_loss);
  bool should_stop() const noexcept { return stale_ >= patience_; }
  std::size_t best_epoch() const noexcept { return best_epoch_; }
  double best_loss() const noexcept { return best_; }

 private:
  std::size_t patience_;
  std::size_t seen_ = 0;
  std::size_t stale_ = 0;
  std::size_t best_epoch_ = 0;
  double best_ = std::numeric_limits<double>::infinity();
};

struct TrainResult {
  MlpParams params;
  std::optional<Tensor> delta;
  TrainHistory history;
};

// Mini-batch Adam on the noisy labels of `train_set`, early-stopped on the
// loss over `val_set`. Returns the snapshot from the best validation epoch.
// A supplied delta is optimised jointly as the tape leaf "delta".
TrainResult train(MlpParams params, const LossSpec& spec, const LabeledDataset& train_set,
                  const LabeledDataset& val_set, const TrainConfig& config, std::optional<Tensor> delta = {});

// Loss of `spec` over the whole set, scored against clean or noisy labels.
double dataset_loss(const MlpParams& params, const LabeledDataset& data, const LossSpec& spec,
                    const std::optional<Tensor>& delta, bool use_noisy_labels);

struct EvalResult {
  double loss;
  double accuracy;  // percent
};

// Scored against clean labels. Revision specs use `delta` (zero if absent).
EvalResult evaluate(const MlpParams& params, const LabeledDataset& test_set, const LossSpec& spec,
                    const std::optional<Tensor>& delta = {});

// Anchor estimate from the model's posteriors on `data`.
TransitionMatrix estimate_transition(const MlpParams& params, const LabeledDataset& data,
                                     const AnchorSettings& anchor);

struct RevisionOutcome {
  MlpParams params;
  Tensor delta;
  Tensor t_final;
  TrainHistory history;
};

// Joint fine-tuning of the classifier and a zero-initialised slack matrix.
// Zero epochs returns the inputs unchanged with t_final = effective(T_hat, 0).
RevisionOutcome revise(const MlpParams& start, const TransitionMatrix& t_hat, const LabeledDataset& train_set,
                       const LabeledDataset& val_set, const TrainConfig& config, const RevisionSettings& settings,
                       bool beta_stop_gradient = false);

struct RevisionPipelineConfig {
  MlpConfig model;
  TrainConfig base;
  TrainConfig revision = TrainConfig::revision_defaults();
  RevisionSettings settings;
  AnchorSettings anchor;
  bool beta_stop_gradient = false;
};

struct PipelineResult {
  TrainResult stage1;
  TransitionMatrix t_hat;
  TrainResult stage2;
  RevisionOutcome stage3;
};

class StageError : public std::runtime_error {
 public:
  StageError(int stage, const std::string& what)
      : std::runtime_error("stage " + std::to_string(stage) + ": " + what), stage_(stage) {}
  int stage() const noexcept { return stage_; }

 private:
  int stage_;
};

// Stage 1: cross-entropy classifier, anchor estimate T_hat on the training split.
// Stage 2: fresh classifier trained with the reweighted loss under T_hat.
// Stage 3: revise() from the stage-2 weights.
PipelineResult revision_pipeline(const LabeledDataset& train_set, const LabeledDataset& val_set,
                                 const RevisionPipelineConfig& config);

}  // namespace lnl
