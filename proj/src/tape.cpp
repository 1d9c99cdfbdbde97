#include "lnl/tape.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <optional>

#include "lnl/errors.hpp"

namespace lnl {

const char* primitive_name(Primitive op) {
  switch (op) {
    case Primitive::leaf: return "leaf";
    case Primitive::matmul: return "matmul";
    case Primitive::add_broadcast: return "add_broadcast";
    case Primitive::relu: return "relu";
    case Primitive::row_softmax: return "row_softmax";
    case Primitive::log: return "log";
    case Primitive::exp: return "exp";
    case Primitive::elementwise_mul: return "elementwise_mul";
    case Primitive::elementwise_div: return "elementwise_div";
    case Primitive::gather_per_row: return "gather_per_row";
    case Primitive::sum: return "sum";
    case Primitive::mean: return "mean";
    case Primitive::scalar_mul: return "scalar_mul";
    case Primitive::clamp_min: return "clamp_min";
    case Primitive::stop_gradient: return "stop_gradient";
  }
  return "unknown";
}

const Tensor& Var::value() const {
  if (tape_ == nullptr) {
    throw UsageError("value() on an unbound Var");
  }
  return tape_->node(index_).value;
}

bool Var::requires_grad() const { return tape_ != nullptr && tape_->node(index_).requires_grad; }

Var Tape::parameter(std::string name, Tensor value) {
  for (const auto& n : nodes_) {
    if (n.op == Primitive::leaf && n.param_name == name) {
      throw UsageError("duplicate parameter name '" + name + "' on tape");
    }
  }
  Node node;
  node.value = std::move(value);
  node.param_name = std::move(name);
  node.requires_grad = true;
  return record(std::move(node));
}

Var Tape::constant(Tensor value) {
  Node node;
  node.value = std::move(value);
  return record(std::move(node));
}

Var Tape::record(Node node) {
  if (consumed_) {
    throw UsageError("tape already consumed by backward(); call reset() before recording");
  }
  nodes_.push_back(std::move(node));
  return Var(this, nodes_.size() - 1);
}

void Tape::check_owner(const Var& v) const {
  if (v.tape() != this) {
    throw UsageError("variable does not belong to this tape");
  }
}

void Tape::reset() {
  nodes_.clear();
  consumed_ = false;
}

namespace {

Tape& common_tape(const Var& a) {
  if (a.tape() == nullptr) {
    throw UsageError("primitive applied to an unbound Var");
  }
  return *a.tape();
}

Tape& common_tape(const Var& a, const Var& b) {
  Tape& t = common_tape(a);
  t.check_owner(b);
  return t;
}

Tape::Node unary_node(Primitive op, const Var& a, Tensor value) {
  Tape::Node n;
  n.op = op;
  n.inputs[0] = a.index();
  n.input_count = 1;
  n.value = std::move(value);
  n.requires_grad = a.requires_grad();
  return n;
}

Tape::Node binary_node(Primitive op, const Var& a, const Var& b, Tensor value) {
  Tape::Node n;
  n.op = op;
  n.inputs[0] = a.index();
  n.inputs[1] = b.index();
  n.input_count = 2;
  n.value = std::move(value);
  n.requires_grad = a.requires_grad() || b.requires_grad();
  return n;
}

void require_matrix(const Tensor& t, const char* op) {
  if (t.rank() != 2) {
    throw ContractViolation(std::string(op) + ": expected a matrix, got shape " + shape_string(t.shape()));
  }
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw ContractViolation(std::string(op) + ": shape mismatch " + shape_string(a.shape()) + " vs " +
                            shape_string(b.shape()));
  }
}

// out(m,n) += a(m,k) * b(k,n), with optional transposes of the operands.
void gemm_accumulate(const Tensor& a, bool trans_a, const Tensor& b, bool trans_b, Tensor& out) {
  const std::size_t m = out.shape()[0];
  const std::size_t n = out.shape()[1];
  const std::size_t k = trans_a ? a.shape()[0] : a.shape()[1];
  const std::size_t a_cols = a.shape()[1];
  const std::size_t b_cols = b.shape()[1];
  const double* ad = a.data().data();
  const double* bd = b.data().data();
  double* od = out.data().data();
  for (std::size_t i = 0; i < m; ++i) {
    double* orow = od + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const double av = trans_a ? ad[p * a_cols + i] : ad[i * a_cols + p];
      if (av == 0.0) {
        continue;
      }
      if (trans_b) {
        for (std::size_t j = 0; j < n; ++j) {
          orow[j] += av * bd[j * b_cols + p];
        }
      } else {
        const double* brow = bd + p * b_cols;
        for (std::size_t j = 0; j < n; ++j) {
          orow[j] += av * brow[j];
        }
      }
    }
  }
}

}  // namespace

Var matmul(Var a, Var b) {
  Tape& tape = common_tape(a, b);
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  require_matrix(av, "matmul");
  require_matrix(bv, "matmul");
  if (av.shape()[1] != bv.shape()[0]) {
    throw ContractViolation("matmul: inner dimensions differ, " + shape_string(av.shape()) + " x " +
                            shape_string(bv.shape()));
  }
  Tensor out = Tensor::zeros({av.shape()[0], bv.shape()[1]});
  gemm_accumulate(av, false, bv, false, out);
  return tape.record(binary_node(Primitive::matmul, a, b, std::move(out)));
}

Var add_broadcast(Var a, Var b) {
  Tape& tape = common_tape(a, b);
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  Tensor out = av;
  if (bv.shape() == av.shape()) {
    for (std::size_t i = 0; i < out.size(); ++i) {
      out[i] += bv[i];
    }
  } else if (bv.size() == 1 && bv.rank() == 0) {
    for (double& v : out.data()) {
      v += bv[0];
    }
  } else if (av.rank() == 2 && bv.rank() == 1 && bv.size() == av.shape()[1]) {
    const std::size_t n = av.shape()[1];
    for (std::size_t i = 0; i < out.size(); ++i) {
      out[i] += bv[i % n];
    }
  } else {
    throw ContractViolation("add_broadcast: cannot broadcast " + shape_string(bv.shape()) + " onto " +
                            shape_string(av.shape()));
  }
  return tape.record(binary_node(Primitive::add_broadcast, a, b, std::move(out)));
}

Var relu(Var a) {
  Tape& tape = common_tape(a);
  Tensor out = a.value();
  for (double& v : out.data()) {
    v = v < 0.0 ? 0.0 : v;  // NaN passes through
  }
  return tape.record(unary_node(Primitive::relu, a, std::move(out)));
}

Var row_softmax(Var a) {
  Tape& tape = common_tape(a);
  const Tensor& av = a.value();
  if (av.rank() != 1 && av.rank() != 2) {
    throw ContractViolation("row_softmax: expected rank 1 or 2, got " + shape_string(av.shape()));
  }
  Tensor out = av;
  const std::size_t rows = out.rows();
  for (std::size_t r = 0; r < rows; ++r) {
    auto row = out.row(r);
    const double peak = *std::max_element(row.begin(), row.end());
    double total = 0.0;
    for (double& v : row) {
      v = std::exp(v - peak);
      total += v;
    }
    for (double& v : row) {
      v /= total;
    }
  }
  return tape.record(unary_node(Primitive::row_softmax, a, std::move(out)));
}

Var log(Var a) {
  Tape& tape = common_tape(a);
  Tensor out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) {
    if (!(out[i] > 0.0)) {
      throw DomainError("log: non-positive input " + std::to_string(out[i]) + " at index " + std::to_string(i));
    }
    out[i] = std::log(out[i]);
  }
  return tape.record(unary_node(Primitive::log, a, std::move(out)));
}

Var exp(Var a) {
  Tape& tape = common_tape(a);
  Tensor out = a.value();
  for (double& v : out.data()) {
    v = std::exp(v);
  }
  return tape.record(unary_node(Primitive::exp, a, std::move(out)));
}

Var elementwise_mul(Var a, Var b) {
  Tape& tape = common_tape(a, b);
  require_same_shape(a.value(), b.value(), "elementwise_mul");
  Tensor out = a.value();
  const Tensor& bv = b.value();
  for (std::size_t i = 0; i < out.size(); ++i) {
    out[i] *= bv[i];
  }
  return tape.record(binary_node(Primitive::elementwise_mul, a, b, std::move(out)));
}

Var elementwise_div(Var a, Var b) {
  Tape& tape = common_tape(a, b);
  require_same_shape(a.value(), b.value(), "elementwise_div");
  Tensor out = a.value();
  const Tensor& bv = b.value();
  for (std::size_t i = 0; i < out.size(); ++i) {
    if (bv[i] == 0.0) {
      throw DomainError("elementwise_div: zero denominator at index " + std::to_string(i));
    }
    out[i] /= bv[i];
  }
  return tape.record(binary_node(Primitive::elementwise_div, a, b, std::move(out)));
}

Var gather_per_row(Var a, std::span<const int> labels) {
  Tape& tape = common_tape(a);
  const Tensor& av = a.value();
  require_matrix(av, "gather_per_row");
  const std::size_t rows = av.shape()[0];
  const std::size_t cols = av.shape()[1];
  if (labels.size() != rows) {
    throw ContractViolation("gather_per_row: " + std::to_string(labels.size()) + " labels for " +
                            std::to_string(rows) + " rows");
  }
  std::vector<double> picked(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    if (labels[r] < 0 || static_cast<std::size_t>(labels[r]) >= cols) {
      throw ContractViolation("gather_per_row: label " + std::to_string(labels[r]) + " out of range at row " +
                              std::to_string(r));
    }
    picked[r] = av(r, static_cast<std::size_t>(labels[r]));
  }
  Tape::Node n = unary_node(Primitive::gather_per_row, a, Tensor::vector(std::move(picked)));
  n.labels.assign(labels.begin(), labels.end());
  return tape.record(std::move(n));
}

Var sum(Var a) {
  Tape& tape = common_tape(a);
  double total = 0.0;
  for (double v : a.value().data()) {
    total += v;
  }
  return tape.record(unary_node(Primitive::sum, a, Tensor::scalar(total)));
}

Var mean(Var a) {
  Tape& tape = common_tape(a);
  const Tensor& av = a.value();
  if (av.size() == 0) {
    throw ContractViolation("mean: empty tensor");
  }
  double total = 0.0;
  for (double v : av.data()) {
    total += v;
  }
  return tape.record(unary_node(Primitive::mean, a, Tensor::scalar(total / static_cast<double>(av.size()))));
}

Var scalar_mul(Var a, double factor) {
  Tape& tape = common_tape(a);
  Tensor out = a.value();
  for (double& v : out.data()) {
    v *= factor;
  }
  Tape::Node n = unary_node(Primitive::scalar_mul, a, std::move(out));
  n.scalar = factor;
  return tape.record(std::move(n));
}

Var clamp_min(Var a, double floor) {
  Tape& tape = common_tape(a);
  Tensor out = a.value();
  for (double& v : out.data()) {
    v = v < floor ? floor : v;
  }
  Tape::Node n = unary_node(Primitive::clamp_min, a, std::move(out));
  n.scalar = floor;
  return tape.record(std::move(n));
}

Var stop_gradient(Var a) {
  Tape& tape = common_tape(a);
  Tape::Node n = unary_node(Primitive::stop_gradient, a, a.value());
  n.requires_grad = false;
  return tape.record(std::move(n));
}

Var apply_primitive(Primitive op, std::span<const Var> inputs, const PrimitiveAttrs& attrs) {
  auto need = [&](std::size_t count) {
    if (inputs.size() != count) {
      throw ContractViolation(std::string(primitive_name(op)) + ": expected " + std::to_string(count) +
                              " inputs, got " + std::to_string(inputs.size()));
    }
  };
  switch (op) {
    case Primitive::matmul: need(2); return matmul(inputs[0], inputs[1]);
    case Primitive::add_broadcast: need(2); return add_broadcast(inputs[0], inputs[1]);
    case Primitive::relu: need(1); return relu(inputs[0]);
    case Primitive::row_softmax: need(1); return row_softmax(inputs[0]);
    case Primitive::log: need(1); return log(inputs[0]);
    case Primitive::exp: need(1); return exp(inputs[0]);
    case Primitive::elementwise_mul: need(2); return elementwise_mul(inputs[0], inputs[1]);
    case Primitive::elementwise_div: need(2); return elementwise_div(inputs[0], inputs[1]);
    case Primitive::gather_per_row: need(1); return gather_per_row(inputs[0], attrs.labels);
    case Primitive::sum: need(1); return sum(inputs[0]);
    case Primitive::mean: need(1); return mean(inputs[0]);
    case Primitive::scalar_mul: need(1); return scalar_mul(inputs[0], attrs.scalar);
    case Primitive::clamp_min: need(1); return clamp_min(inputs[0], attrs.scalar);
    case Primitive::stop_gradient: need(1); return stop_gradient(inputs[0]);
    case Primitive::leaf: break;
  }
  throw ContractViolation("apply_primitive: leaf is not a primitive");
}

GradientMap Tape::backward(Var loss) {
  if (loss.tape() != this) {
    throw UsageError("backward: loss was not produced on this tape");
  }
  if (consumed_) {
    throw UsageError("backward: tape already consumed; call reset() and re-record");
  }
  if (loss.index() >= nodes_.size()) {
    throw UsageError("backward: loss is not on the tape");
  }
  const Tensor& lv = loss.value();
  if (lv.size() != 1) {
    throw ContractViolation("backward: loss must be a scalar, got shape " + shape_string(lv.shape()));
  }
  consumed_ = true;

  std::vector<std::optional<Tensor>> grads(loss.index() + 1);
  grads[loss.index()] = Tensor::filled(lv.shape(), 1.0);

  auto accumulate = [&](std::size_t target) -> Tensor& {
    auto& slot = grads[target];
    if (!slot) {
      slot = Tensor::zeros(nodes_[target].value.shape());
    }
    return *slot;
  };

  GradientMap result;
  for (std::size_t idx = loss.index() + 1; idx-- > 0;) {
    Node& n = nodes_[idx];
    if (!grads[idx] || !n.requires_grad) {
      continue;
    }
    const Tensor& g = *grads[idx];
    if (n.op == Primitive::leaf) {
      result.emplace(n.param_name, g);
      continue;
    }
    const Node& in0 = nodes_[n.inputs[0]];
    const bool grad0 = in0.requires_grad;
    const bool grad1 = n.input_count > 1 && nodes_[n.inputs[1]].requires_grad;

    switch (n.op) {
      case Primitive::matmul: {
        const Node& in1 = nodes_[n.inputs[1]];
        if (grad0) {
          gemm_accumulate(g, false, in1.value, true, accumulate(n.inputs[0]));
        }
        if (grad1) {
          gemm_accumulate(in0.value, true, g, false, accumulate(n.inputs[1]));
        }
        break;
      }
      case Primitive::add_broadcast: {
        if (grad0) {
          Tensor& ga = accumulate(n.inputs[0]);
          for (std::size_t i = 0; i < g.size(); ++i) {
            ga[i] += g[i];
          }
        }
        if (grad1) {
          Tensor& gb = accumulate(n.inputs[1]);
          if (gb.shape() == g.shape()) {
            for (std::size_t i = 0; i < g.size(); ++i) {
              gb[i] += g[i];
            }
          } else {
            const std::size_t width = gb.size();
            for (std::size_t i = 0; i < g.size(); ++i) {
              gb[i % width] += g[i];
            }
          }
        }
        break;
      }
      case Primitive::relu: {
        Tensor& ga = accumulate(n.inputs[0]);
        for (std::size_t i = 0; i < g.size(); ++i) {
          if (in0.value[i] > 0.0) {
            ga[i] += g[i];
          }
        }
        break;
      }
      case Primitive::row_softmax: {
        Tensor& ga = accumulate(n.inputs[0]);
        const std::size_t rows = n.value.rows();
        for (std::size_t r = 0; r < rows; ++r) {
          const auto y = n.value.row(r);
          const auto gy = g.row(r);
          double dot = 0.0;
          for (std::size_t j = 0; j < y.size(); ++j) {
            dot += gy[j] * y[j];
          }
          auto gx = ga.row(r);
          for (std::size_t j = 0; j < y.size(); ++j) {
            gx[j] += y[j] * (gy[j] - dot);
          }
        }
        break;
      }
      case Primitive::log: {
        Tensor& ga = accumulate(n.inputs[0]);
        for (std::size_t i = 0; i < g.size(); ++i) {
          ga[i] += g[i] / in0.value[i];
        }
        break;
      }
      case Primitive::exp: {
        Tensor& ga = accumulate(n.inputs[0]);
        for (std::size_t i = 0; i < g.size(); ++i) {
          ga[i] += g[i] * n.value[i];
        }
        break;
      }
      case Primitive::elementwise_mul: {
        const Node& in1 = nodes_[n.inputs[1]];
        if (grad0) {
          Tensor& ga = accumulate(n.inputs[0]);
          for (std::size_t i = 0; i < g.size(); ++i) {
            ga[i] += g[i] * in1.value[i];
          }
        }
        if (grad1) {
          Tensor& gb = accumulate(n.inputs[1]);
          for (std::size_t i = 0; i < g.size(); ++i) {
            gb[i] += g[i] * in0.value[i];
          }
        }
        break;
      }
      case Primitive::elementwise_div: {
        const Node& in1 = nodes_[n.inputs[1]];
        if (grad0) {
          Tensor& ga = accumulate(n.inputs[0]);
          for (std::size_t i = 0; i < g.size(); ++i) {
            ga[i] += g[i] / in1.value[i];
          }
        }
        if (grad1) {
          Tensor& gb = accumulate(n.inputs[1]);
          for (std::size_t i = 0; i < g.size(); ++i) {
            gb[i] -= g[i] * n.value[i] / in1.value[i];
          }
        }
        break;
      }
      case Primitive::gather_per_row: {
        Tensor& ga = accumulate(n.inputs[0]);
        for (std::size_t r = 0; r < n.labels.size(); ++r) {
          ga(r, static_cast<std::size_t>(n.labels[r])) += g[r];
        }
        break;
      }
      case Primitive::sum:
      case Primitive::mean: {
        Tensor& ga = accumulate(n.inputs[0]);
        const double scale = n.op == Primitive::mean ? 1.0 / static_cast<double>(ga.size()) : 1.0;
        for (double& v : ga.data()) {
          v += g[0] * scale;
        }
        break;
      }
      case Primitive::scalar_mul: {
        Tensor& ga = accumulate(n.inputs[0]);
        for (std::size_t i = 0; i < g.size(); ++i) {
          ga[i] += g[i] * n.scalar;
        }
        break;
      }
      case Primitive::clamp_min: {
        Tensor& ga = accumulate(n.inputs[0]);
        for (std::size_t i = 0; i < g.size(); ++i) {
          if (in0.value[i] >= n.scalar) {
            ga[i] += g[i];
          }
        }
        break;
      }
      case Primitive::stop_gradient:
      case Primitive::leaf:
        break;
    }
    grads[idx].reset();
  }

  // Parameters that the loss does not depend on get explicit zero gradients.
  for (std::size_t idx = 0; idx <= loss.index(); ++idx) {
    const Node& n = nodes_[idx];
    if (n.op == Primitive::leaf && n.requires_grad && !result.contains(n.param_name)) {
      result.emplace(n.param_name, Tensor::zeros(n.value.shape()));
    }
  }
  return result;
}

double finite_diff_check(const LossBuilder& loss_builder, const std::vector<Tensor>& params, double step) {
  if (!(step > 0.0)) {
    throw ContractViolation("finite_diff_check: step must be positive");
  }
  auto names = [&](std::size_t i) { return "p" + std::to_string(i); };
  auto evaluate = [&](const std::vector<Tensor>& values) {
    Tape tape;
    std::vector<Var> vars;
    vars.reserve(values.size());
    for (std::size_t i = 0; i < values.size(); ++i) {
      vars.push_back(tape.parameter(names(i), values[i]));
    }
    return loss_builder(tape, vars).value().item();
  };

  GradientMap analytic;
  {
    Tape tape;
    std::vector<Var> vars;
    for (std::size_t i = 0; i < params.size(); ++i) {
      vars.push_back(tape.parameter(names(i), params[i]));
    }
    analytic = tape.backward(loss_builder(tape, vars));
  }

  double worst = 0.0;
  std::vector<Tensor> probe = params;
  for (std::size_t p = 0; p < params.size(); ++p) {
    const Tensor& grad = analytic.at(names(p));
    for (std::size_t i = 0; i < params[p].size(); ++i) {
      const double original = params[p][i];
      probe[p][i] = original + step;
      const double up = evaluate(probe);
      probe[p][i] = original - step;
      const double down = evaluate(probe);
      probe[p][i] = original;
      const double numeric = (up - down) / (2.0 * step);
      const double denom = std::max({std::abs(grad[i]), std::abs(numeric), 1e-8});
      worst = std::max(worst, std::abs(grad[i] - numeric) / denom);
    }
  }
  return worst;
}

}  // namespace lnl
