#pragma once

#include <cstddef>
#include <cstdint>
#include <deque>
#include <functional>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "lnl/tensor.hpp"

namespace lnl {

enum class Primitive : std::uint8_t {
  leaf,
  matmul,
  add_broadcast,
  relu,
  row_softmax,
  log,
  exp,
  elementwise_mul,
  elementwise_div,
  gather_per_row,
  sum,
  mean,
  scalar_mul,
  clamp_min,
  stop_gradient,
};

const char* primitive_name(Primitive op);

class Tape;

// Handle to a node on a tape. Cheap to copy; valid until the tape is reset.
class Var {
 public:
  Var() = default;

  const Tensor& value() const;
  const Shape& shape() const { return value().shape(); }
  Tape* tape() const noexcept { return tape_; }
  std::size_t index() const noexcept { return index_; }
  bool requires_grad() const;

 private:
  friend class Tape;
  Var(Tape* tape, std::size_t index) : tape_(tape), index_(index) {}

  Tape* tape_ = nullptr;
  std::size_t index_ = 0;
};

using GradientMap = std::map<std::string, Tensor>;

// Linear record of primitive applications. Nodes are appended in evaluation
// order, so walking the record backwards visits every node after all of its
// consumers.
//
// A tape is single-use: backward() consumes it and further use throws
// UsageError until reset().
class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  // Trainable leaf; its gradient is returned by backward() under `name`.
  Var parameter(std::string name, Tensor value);
  // Leaf that never receives a gradient.
  Var constant(Tensor value);

  GradientMap backward(Var loss);

  void reset();
  bool consumed() const noexcept { return consumed_; }
  std::size_t size() const noexcept { return nodes_.size(); }

  // Internal: used by the primitive implementations.
  struct Node {
    Primitive op = Primitive::leaf;
    std::size_t inputs[2] = {0, 0};
    std::size_t input_count = 0;
    Tensor value;
    std::vector<int> labels;
    double scalar = 0.0;
    std::string param_name;
    bool requires_grad = false;
  };
  Var record(Node node);
  const Node& node(std::size_t i) const { return nodes_[i]; }
  void check_owner(const Var& v) const;

 private:
  std::deque<Node> nodes_;
  bool consumed_ = false;
};

// Primitives. Shape rules:
//   matmul          (m,k) x (k,n) -> (m,n)
//   add_broadcast   (m,n) + (m,n) | (n) | scalar -> (m,n)
//   row_softmax     (m,n) -> (m,n), each row normalised; rank 1 is one row
//   gather_per_row  (m,n), m labels -> (m), picks a[r, labels[r]]
//   sum, mean       any -> scalar
// Shape violations throw ContractViolation; log of a non-positive value and
// division by zero throw DomainError naming the primitive and flat index.
Var matmul(Var a, Var b);
Var add_broadcast(Var a, Var b);
Var relu(Var a);
Var row_softmax(Var a);
Var log(Var a);
Var exp(Var a);
Var elementwise_mul(Var a, Var b);
Var elementwise_div(Var a, Var b);
Var gather_per_row(Var a, std::span<const int> labels);
Var sum(Var a);
Var mean(Var a);
Var scalar_mul(Var a, double factor);
Var clamp_min(Var a, double floor);
Var stop_gradient(Var a);

struct PrimitiveAttrs {
  double scalar = 0.0;
  std::vector<int> labels;
};

// Generic dispatch over the primitive set.
Var apply_primitive(Primitive op, std::span<const Var> inputs, const PrimitiveAttrs& attrs = {});

// Compares tape gradients of `loss_builder` against central differences.
// Returns the max over all coordinates of |analytic - numeric| divided by
// max(|analytic|, |numeric|, 1e-8). loss_builder must be deterministic.
using LossBuilder = std::function<Var(Tape&, std::span<const Var>)>;
double finite_diff_check(const LossBuilder& loss_builder, const std::vector<Tensor>& params, double step);

}  // namespace lnl
