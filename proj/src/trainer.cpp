#include "lnl/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>

#include "lnl/errors.hpp"
#include "lnl/format.hpp"
#include "lnl/rng.hpp"

namespace lnl {

namespace {

constexpr std::uint64_t kShuffleStream = 0x5348;
constexpr std::uint64_t kDropoutStream = 0x4452;
constexpr const char* kDeltaName = "delta";

const std::vector<int>& training_labels(const LabeledDataset& data, const char* role) {
  if (!data.noisy_labels) {
    throw ContractViolation(std::string(role) + " set has no noisy labels to train on");
  }
  return *data.noisy_labels;
}

Tensor gather_rows(const Tensor& features, std::span<const std::size_t> rows) {
  const std::size_t d = features.shape()[1];
  Tensor out = Tensor::zeros({rows.size(), d});
  for (std::size_t k = 0; k < rows.size(); ++k) {
    const auto src = features.row(rows[k]);
    std::copy(src.begin(), src.end(), out.row(k).begin());
  }
  return out;
}

}  // namespace

void adam_step(AdamState& state, std::span<const NamedTensor> params, const GradientMap& grads) {
  const AdamHyper& h = state.hyper;
  ++state.step;
  const double t = static_cast<double>(state.step);
  const double correction1 = 1.0 - std::pow(h.beta1, t);
  const double correction2 = 1.0 - std::pow(h.beta2, t);
  for (const auto& p : params) {
    const auto it = grads.find(p.name);
    if (it == grads.end()) {
      throw ContractViolation("adam_step: no gradient for '" + p.name + "'");
    }
    const Tensor& g = it->second;
    Tensor& theta = *p.value;
    if (g.shape() != theta.shape()) {
      throw ContractViolation("adam_step: gradient shape mismatch for '" + p.name + "'");
    }
    auto [m_it, m_new] = state.first_moment.try_emplace(p.name, Tensor::zeros(theta.shape()));
    auto [v_it, v_new] = state.second_moment.try_emplace(p.name, Tensor::zeros(theta.shape()));
    Tensor& m = m_it->second;
    Tensor& v = v_it->second;
    for (std::size_t i = 0; i < theta.size(); ++i) {
      m[i] = h.beta1 * m[i] + (1.0 - h.beta1) * g[i];
      v[i] = h.beta2 * v[i] + (1.0 - h.beta2) * g[i] * g[i];
      const double m_hat = m[i] / correction1;
      const double v_hat = v[i] / correction2;
      theta[i] -= h.learning_rate * m_hat / (std::sqrt(v_hat) + h.epsilon);
    }
  }
}

TrainConfig TrainConfig::revision_defaults() {
  TrainConfig c;
  c.epochs = 20;
  c.batch_size = 256;
  c.learning_rate = 1e-4;
  c.patience = 10;
  return c;
}

void TrainConfig::check(bool allow_zero_epochs) const {
  if ((epochs < 1 && !allow_zero_epochs) || batch_size < 1 || patience < 1) {
    throw ContractViolation("train config needs epochs, batch_size and patience >= 1");
  }
  if (!(learning_rate > 0.0)) {
    throw ContractViolation("train config learning_rate must be positive");
  }
  if (!(beta1 >= 0.0 && beta1 < 1.0 && beta2 >= 0.0 && beta2 < 1.0)) {
    throw ContractViolation("adam betas must be in [0, 1)");
  }
}

void TrainHistory::write_csv(const std::filesystem::path& path) const {
  std::ofstream out(path);
  if (!out) {
    throw IoError("cannot open " + path.string() + " for writing");
  }
  out << "epoch,train_loss,val_loss,val_acc\n";
  for (const auto& e : epochs) {
    out << e.epoch << ',' << format_double(e.train_loss) << ',' << format_double(e.val_loss) << ','
        << format_double(e.val_accuracy) << '\n';
  }
  if (!out) {
    throw IoError("write failed for " + path.string());
  }
}

bool EarlyStopping::observe(double val_loss) {
  ++seen_;
  if (val_loss < best_) {
    best_ = val_loss;
    best_epoch_ = seen_;
    stale_ = 0;
    return true;
  }
  ++stale_;
  return false;
}

double dataset_loss(const MlpParams& params, const LabeledDataset& data, const LossSpec& spec,
                    const std::optional<Tensor>& delta, bool use_noisy_labels) {
  const std::vector<int>& labels = use_noisy_labels ? training_labels(data, "evaluation") : data.clean_labels;
  Tape tape;
  MlpVars vars;
  for (std::size_t l = 0; l < params.layer_count(); ++l) {
    vars.weights.push_back(tape.constant(params.weights[l]));
    vars.biases.push_back(tape.constant(params.biases[l]));
  }
  const Var logits = forward(tape, params, vars, data.features, false, 0);
  std::optional<Var> delta_var;
  if (spec.kind == LossKind::revision) {
    delta_var = tape.constant(delta ? *delta : Tensor::zeros(spec.matrix->tensor().shape()));
  }
  return compute_loss(spec, logits, labels, delta_var).value().item();
}

TrainResult train(MlpParams params, const LossSpec& spec, const LabeledDataset& train_set,
                  const LabeledDataset& val_set, const TrainConfig& config, std::optional<Tensor> delta) {
  config.check();
  spec.check();
  if (train_set.size() == 0 || val_set.size() == 0) {
    throw ContractViolation("train: training and validation sets must be nonempty");
  }
  if (spec.kind == LossKind::revision && !delta) {
    throw ContractViolation("train: revision loss needs a delta tensor");
  }
  const std::vector<int>& labels = training_labels(train_set, "training");
  const std::vector<int>& val_labels = training_labels(val_set, "validation");

  AdamState adam;
  adam.hyper = {config.learning_rate, config.beta1, config.beta2, config.epsilon};

  TrainResult best{params, delta, {}};
  TrainHistory history;
  EarlyStopping stopper(config.patience);

  const std::size_t n = train_set.size();
  std::vector<std::size_t> order(n);
  std::vector<int> batch_labels;

  for (std::size_t epoch = 1; epoch <= config.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), std::size_t{0});
    Rng shuffle(mix_seed(config.seed ^ kShuffleStream, epoch));
    for (std::size_t i = n - 1; i > 0; --i) {
      std::swap(order[i], order[shuffle.below(i + 1)]);
    }

    double loss_total = 0.0;
    std::size_t batches = 0;
    for (std::size_t start = 0; start < n; start += config.batch_size) {
      const std::size_t stop = std::min(n, start + config.batch_size);
      const std::span<const std::size_t> rows(order.data() + start, stop - start);
      const Tensor batch = gather_rows(train_set.features, rows);
      batch_labels.clear();
      for (std::size_t r : rows) {
        batch_labels.push_back(labels[r]);
      }

      Tape tape;
      const MlpVars vars = register_params(tape, params);
      std::optional<Var> delta_var;
      if (delta) {
        delta_var = tape.parameter(kDeltaName, *delta);
      }
      const std::uint64_t dropout_seed = mix_seed(config.seed ^ kDropoutStream, epoch * 1000003ULL + batches);
      const std::string where = "epoch " + std::to_string(epoch) + ", batch " + std::to_string(batches + 1);
      std::optional<Var> loss;
      try {
        const Var logits = forward(tape, params, vars, batch, config.dropout, dropout_seed);
        loss = compute_loss(spec, logits, batch_labels, delta_var);
      } catch (const DomainError& e) {
        throw DomainError(std::string(e.what()) + " (training loss at " + where + ")");
      }
      const double value = loss->value().item();
      if (!std::isfinite(value)) {
        throw std::runtime_error("non-finite training loss at " + where);
      }
      const GradientMap grads = tape.backward(*loss);

      std::vector<NamedTensor> named;
      for (std::size_t l = 0; l < params.layer_count(); ++l) {
        named.push_back({MlpParams::weight_name(l), &params.weights[l]});
        named.push_back({MlpParams::bias_name(l), &params.biases[l]});
      }
      if (delta) {
        named.push_back({kDeltaName, &*delta});
      }
      adam_step(adam, named, grads);

      history.batch_losses.push_back(value);
      loss_total += value;
      ++batches;
    }

    const double val_loss = dataset_loss(params, val_set, spec, delta, true);
    if (!std::isfinite(val_loss)) {
      throw std::runtime_error("non-finite validation loss at epoch " + std::to_string(epoch));
    }
    const auto predictions = argmax_rows(predict_proba(params, val_set.features));
    std::size_t correct = 0;
    for (std::size_t i = 0; i < predictions.size(); ++i) {
      correct += predictions[i] == val_labels[i] ? 1 : 0;
    }
    const double val_acc = 100.0 * static_cast<double>(correct) / static_cast<double>(predictions.size());
    history.epochs.push_back({epoch, loss_total / static_cast<double>(batches), val_loss, val_acc});

    if (stopper.observe(val_loss)) {
      best.params = params;
      best.delta = delta;
    }
    history.stop_epoch = epoch;
    if (stopper.should_stop()) {
      break;
    }
  }
  history.best_epoch = stopper.best_epoch();
  best.history = std::move(history);
  return best;
}

EvalResult evaluate(const MlpParams& params, const LabeledDataset& test_set, const LossSpec& spec,
                    const std::optional<Tensor>& delta) {
  if (test_set.size() == 0) {
    throw ContractViolation("evaluate: empty test set");
  }
  const double loss = dataset_loss(params, test_set, spec, delta, false);
  const auto predictions = argmax_rows(predict_proba(params, test_set.features));
  std::size_t correct = 0;
  for (std::size_t i = 0; i < predictions.size(); ++i) {
    correct += predictions[i] == test_set.clean_labels[i] ? 1 : 0;
  }
  return {loss, 100.0 * static_cast<double>(correct) / static_cast<double>(test_set.size())};
}

TransitionMatrix estimate_transition(const MlpParams& params, const LabeledDataset& data,
                                     const AnchorSettings& anchor) {
  return estimate_anchor(predict_proba(params, data.features), anchor);
}

RevisionOutcome revise(const MlpParams& start, const TransitionMatrix& t_hat, const LabeledDataset& train_set,
                       const LabeledDataset& val_set, const TrainConfig& config, const RevisionSettings& settings,
                       bool beta_stop_gradient) {
  config.check(true);
  if (t_hat.dim() != start.config.classes) {
    throw ContractViolation("revise: T_hat dimension does not match the model's class count");
  }
  const Tensor zero = Tensor::zeros(t_hat.tensor().shape());
  if (config.epochs == 0) {
    return {start, zero, effective_matrix(t_hat, zero, settings), {}};
  }
  LossSpec spec = LossSpec::revision(t_hat, settings.mode, settings.alpha);
  spec.beta_stop_gradient = beta_stop_gradient;
  TrainResult fit = train(start, spec, train_set, val_set, config, zero);
  Tensor t_final = effective_matrix(t_hat, *fit.delta, settings);
  return {std::move(fit.params), std::move(*fit.delta), std::move(t_final), std::move(fit.history)};
}

PipelineResult revision_pipeline(const LabeledDataset& train_set, const LabeledDataset& val_set,
                                 const RevisionPipelineConfig& config) {
  auto staged = [](int stage, auto&& body) {
    try {
      return body();
    } catch (const StageError&) {
      throw;
    } catch (const std::exception& e) {
      throw StageError(stage, e.what());
    }
  };

  TrainResult stage1 = staged(1, [&] {
    return train(init_mlp(config.model), LossSpec::baseline(), train_set, val_set, config.base);
  });
  TransitionMatrix t_hat = staged(1, [&] { return estimate_transition(stage1.params, train_set, config.anchor); });

  TrainResult stage2 = staged(2, [&] {
    MlpConfig fresh = config.model;
    fresh.seed = mix_seed(config.model.seed, 2);
    TrainConfig base = config.base;
    base.seed = mix_seed(config.base.seed, 2);
    LossSpec spec = LossSpec::reweight(t_hat);
    spec.beta_stop_gradient = config.beta_stop_gradient;
    return train(init_mlp(fresh), spec, train_set, val_set, base);
  });

  RevisionOutcome stage3 = staged(3, [&] {
    return revise(stage2.params, t_hat, train_set, val_set, config.revision, config.settings,
                  config.beta_stop_gradient);
  });
  return {std::move(stage1), std::move(t_hat), std::move(stage2), std::move(stage3)};
}

}  // namespace lnl
