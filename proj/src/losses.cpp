#include "lnl/losses.hpp"

#include "lnl/errors.hpp"

namespace lnl {

const char* loss_kind_name(LossKind kind) {
  switch (kind) {
    case LossKind::baseline_ce: return "baseline_ce";
    case LossKind::forward: return "forward";
    case LossKind::reweight: return "reweight";
    case LossKind::revision: return "revision";
  }
  return "unknown";
}

LossKind parse_loss_kind(const std::string& name) {
  if (name == "baseline_ce" || name == "baseline" || name == "ce") return LossKind::baseline_ce;
  if (name == "forward") return LossKind::forward;
  if (name == "reweight") return LossKind::reweight;
  if (name == "revision") return LossKind::revision;
  throw ContractViolation("unknown loss kind '" + name + "'");
}

LossSpec LossSpec::baseline() { return {}; }

LossSpec LossSpec::forward(TransitionMatrix t) {
  LossSpec s;
  s.kind = LossKind::forward;
  s.matrix = std::move(t);
  return s;
}

LossSpec LossSpec::reweight(TransitionMatrix t) {
  LossSpec s;
  s.kind = LossKind::reweight;
  s.matrix = std::move(t);
  return s;
}

LossSpec LossSpec::revision(TransitionMatrix t_hat, RevisionMode mode, double alpha) {
  LossSpec s;
  s.kind = LossKind::revision;
  s.matrix = std::move(t_hat);
  s.revision_mode = mode;
  s.alpha = alpha;
  s.skip_validation = true;
  return s;
}

void LossSpec::check() const {
  const bool needs_matrix = kind != LossKind::baseline_ce;
  if (needs_matrix != matrix.has_value()) {
    throw ContractViolation(std::string("loss spec '") + loss_kind_name(kind) +
                            (needs_matrix ? "' requires a matrix" : "' takes no matrix"));
  }
  if ((kind == LossKind::revision) != revision_mode.has_value()) {
    throw ContractViolation("revision_mode must be set exactly when kind is revision");
  }
  if (kind == LossKind::revision && *revision_mode == RevisionMode::alpha && !(alpha > 0.0)) {
    throw ContractViolation("alpha must be positive in alpha mode");
  }
}

namespace {

void check_labels(const Var& logits, std::span<const int> labels, const char* who) {
  const Tensor& v = logits.value();
  if (v.rank() != 2) {
    throw ContractViolation(std::string(who) + ": logits must be batch x classes");
  }
  if (labels.size() != v.shape()[0]) {
    throw ContractViolation(std::string(who) + ": label count does not match batch size");
  }
  const auto classes = static_cast<int>(v.shape()[1]);
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] < 0 || labels[i] >= classes) {
      throw ContractViolation(std::string(who) + ": label " + std::to_string(labels[i]) + " out of range at sample " +
                              std::to_string(i));
    }
  }
}

void check_matrix(const TransitionMatrix& t, std::size_t classes, bool skip_validation, const char* who) {
  if (t.dim() != classes) {
    throw ContractViolation(std::string(who) + ": matrix is " + std::to_string(t.dim()) + "x" +
                            std::to_string(t.dim()) + " but logits have " + std::to_string(classes) + " classes");
  }
  if (!skip_validation && !t.is_validated()) {
    const ValidationReport report = validate(t);
    if (!report.ok()) {
      throw ValidationError(std::string(who) + ": matrix is not row-stochastic: " + report.describe());
    }
  }
}

Var negative_log(Var probabilities) {
  return scalar_mul(log(clamp_min(probabilities, kProbabilityFloor)), -1.0);
}

}  // namespace

Var ce_loss(Var logits, std::span<const int> labels) {
  check_labels(logits, labels, "ce_loss");
  const Var g = row_softmax(logits);
  return mean(negative_log(gather_per_row(g, labels)));
}

Var forward_corrected_loss(Var logits, std::span<const int> labels, const TransitionMatrix& t, bool skip_validation) {
  check_labels(logits, labels, "forward_corrected_loss");
  check_matrix(t, logits.value().shape()[1], skip_validation, "forward_corrected_loss");
  Tape& tape = *logits.tape();
  const Var g = row_softmax(logits);
  // Row b of g * T is (T^T g_b)^T.
  const Var noisy = matmul(g, tape.constant(t.tensor()));
  return mean(negative_log(gather_per_row(noisy, labels)));
}

Var reweighted_loss_with(Var logits, std::span<const int> labels, Var t, bool beta_stop_gradient) {
  check_labels(logits, labels, "reweighted_loss");
  const Var g = row_softmax(logits);
  const Var clean = gather_per_row(g, labels);
  const Var noisy = gather_per_row(matmul(g, t), labels);
  const Tensor& denom = noisy.value();
  for (std::size_t i = 0; i < denom.size(); ++i) {
    if (denom[i] == 0.0) {
      throw DomainError("reweighted_loss: zero noisy posterior (T^T g)[label] for sample " + std::to_string(i));
    }
  }
  Var beta = elementwise_div(clean, noisy);
  if (beta_stop_gradient) {
    beta = stop_gradient(beta);
  }
  return mean(elementwise_mul(beta, negative_log(clean)));
}

Var reweighted_loss(Var logits, std::span<const int> labels, const TransitionMatrix& t, bool beta_stop_gradient,
                    bool skip_validation) {
  check_labels(logits, labels, "reweighted_loss");
  check_matrix(t, logits.value().shape()[1], skip_validation, "reweighted_loss");
  return reweighted_loss_with(logits, labels, logits.tape()->constant(t.tensor()), beta_stop_gradient);
}

Var effective_matrix(Var t_hat, Var delta, const RevisionSettings& settings) {
  if (settings.mode == RevisionMode::softmax) {
    return row_softmax(add_broadcast(t_hat, delta));
  }
  return relu(add_broadcast(t_hat, scalar_mul(delta, settings.alpha)));
}

Var revision_loss(Var logits, std::span<const int> labels, const TransitionMatrix& t_hat, Var delta,
                  const RevisionSettings& settings, bool beta_stop_gradient) {
  check_labels(logits, labels, "revision_loss");
  check_matrix(t_hat, logits.value().shape()[1], true, "revision_loss");
  if (delta.shape() != t_hat.tensor().shape()) {
    throw ContractViolation("revision_loss: delta must be " + shape_string(t_hat.tensor().shape()));
  }
  if (settings.mode == RevisionMode::alpha && !(settings.alpha > 0.0)) {
    throw ContractViolation("revision_loss: alpha must be positive");
  }
  const Var t_eff = effective_matrix(logits.tape()->constant(t_hat.tensor()), delta, settings);
  return reweighted_loss_with(logits, labels, t_eff, beta_stop_gradient);
}

Var compute_loss(const LossSpec& spec, Var logits, std::span<const int> labels, std::optional<Var> delta) {
  spec.check();
  switch (spec.kind) {
    case LossKind::baseline_ce:
      return ce_loss(logits, labels);
    case LossKind::forward:
      return forward_corrected_loss(logits, labels, *spec.matrix, spec.skip_validation);
    case LossKind::reweight:
      return reweighted_loss(logits, labels, *spec.matrix, spec.beta_stop_gradient, spec.skip_validation);
    case LossKind::revision: {
      if (!delta) {
        throw ContractViolation("compute_loss: revision loss requires a delta variable");
      }
      return revision_loss(logits, labels, *spec.matrix, *delta, {*spec.revision_mode, spec.alpha},
                           spec.beta_stop_gradient);
    }
  }
  throw ContractViolation("compute_loss: unknown loss kind");
}

}  // namespace lnl
