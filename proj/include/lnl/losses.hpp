#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>

#include "lnl/tape.hpp"
#include "lnl/transition.hpp"

namespace lnl {

// Probabilities are clamped to this floor before entering log.
inline constexpr double kProbabilityFloor = 1e-12;

enum class LossKind : std::uint8_t { baseline_ce, forward, reweight, revision };

const char* loss_kind_name(LossKind kind);
LossKind parse_loss_kind(const std::string& name);

struct LossSpec {
  LossKind kind = LossKind::baseline_ce;
  // Correction matrix for forward/reweight; the initial estimate T_hat for revision.
  std::optional<TransitionMatrix> matrix;
  std::optional<RevisionMode> revision_mode;
  double alpha = 0.01;
  // Treat the importance weight as a constant during backprop.
  bool beta_stop_gradient = false;
  // Skip the row-stochastic check on `matrix` (alpha-revised matrices).
  bool skip_validation = false;

  static LossSpec baseline();
  static LossSpec forward(TransitionMatrix t);
  static LossSpec reweight(TransitionMatrix t);
  static LossSpec revision(TransitionMatrix t_hat, RevisionMode mode, double alpha = 0.01);

  // Throws ContractViolation when fields do not match `kind`.
  void check() const;
};

// mean_b -log(softmax(logits)[b, label_b])
Var ce_loss(Var logits, std::span<const int> labels);

// mean_b -log((T^T g_b)[label_b]), g = softmax(logits)
Var forward_corrected_loss(Var logits, std::span<const int> labels, const TransitionMatrix& t,
                           bool skip_validation = false);

// mean_b beta_b * -log(g_b[label_b]) with beta_b = g_b[label_b] / (T^T g_b)[label_b]
Var reweighted_loss(Var logits, std::span<const int> labels, const TransitionMatrix& t,
                    bool beta_stop_gradient = false, bool skip_validation = false);

// Same weighting with a matrix that lives on the tape.
Var reweighted_loss_with(Var logits, std::span<const int> labels, Var t, bool beta_stop_gradient);

// Effective matrix on the tape: row_softmax(T_hat + delta) or relu(T_hat + alpha * delta).
Var effective_matrix(Var t_hat, Var delta, const RevisionSettings& settings);

Var revision_loss(Var logits, std::span<const int> labels, const TransitionMatrix& t_hat, Var delta,
                  const RevisionSettings& settings, bool beta_stop_gradient = false);

// Dispatches on spec.kind. Revision requires `delta`.
Var compute_loss(const LossSpec& spec, Var logits, std::span<const int> labels, std::optional<Var> delta = {});

}  // namespace lnl
