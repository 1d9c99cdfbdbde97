#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "lnl/tape.hpp"
#include "lnl/tensor.hpp"

namespace lnl {

struct MlpConfig {
  std::size_t input_dim = 16;
  std::vector<std::size_t> hidden_dims = {64, 32};
  std::size_t classes = 4;
  double dropout_rate = 0.2;
  std::uint64_t seed = 0;

  void check() const;
};

// Layer l maps x (batch x in) to x * weights[l] + biases[l].
struct MlpParams {
  MlpConfig config;
  std::vector<Tensor> weights;
  std::vector<Tensor> biases;

  std::size_t layer_count() const noexcept { return weights.size(); }
  static std::string weight_name(std::size_t layer);
  static std::string bias_name(std::size_t layer);

  friend bool operator==(const MlpParams& a, const MlpParams& b) {
    return a.weights == b.weights && a.biases == b.biases;
  }
};

// Weights ~ N(0, 1/fan_in), biases zero.
MlpParams init_mlp(const MlpConfig& config);

// Parameter leaves registered on a tape, in layer order.
struct MlpVars {
  std::vector<Var> weights;
  std::vector<Var> biases;
};

MlpVars register_params(Tape& tape, const MlpParams& params);

// Logits on the tape. Hidden activations are relu; when train_mode is set,
// inverted dropout follows each hidden activation with masks drawn from
// dropout_seed.
Var forward(Tape& tape, const MlpParams& params, const MlpVars& vars, const Tensor& batch, bool train_mode,
            std::uint64_t dropout_seed);

// Logits without gradient tracking.
Tensor forward(const MlpParams& params, const Tensor& batch, bool train_mode = false, std::uint64_t dropout_seed = 0);

// row_softmax of eval-mode logits.
Tensor predict_proba(const MlpParams& params, const Tensor& batch);

// Index of the largest entry per row; ties go to the lowest index.
std::vector<int> argmax_rows(const Tensor& scores);

// Text checkpoint: config header followed by per-layer arrays, written with
// round-trip precision.
void save_checkpoint(const MlpParams& params, const std::filesystem::path& path);
MlpParams load_checkpoint(const std::filesystem::path& path);

}  // namespace lnl
