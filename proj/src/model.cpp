#include "lnl/model.hpp"

#include <cmath>
#include <fstream>
#include <sstream>

#include "lnl/errors.hpp"
#include "lnl/format.hpp"
#include "lnl/rng.hpp"

namespace lnl {

void MlpConfig::check() const {
  if (input_dim < 1 || classes < 2) {
    throw ContractViolation("mlp config needs input_dim >= 1 and classes >= 2");
  }
  for (std::size_t h : hidden_dims) {
    if (h < 1) {
      throw ContractViolation("mlp hidden layer widths must be >= 1");
    }
  }
  if (!(dropout_rate >= 0.0 && dropout_rate < 1.0)) {
    throw ContractViolation("mlp dropout_rate must be in [0, 1)");
  }
}

std::string MlpParams::weight_name(std::size_t layer) { return "layer" + std::to_string(layer) + ".weight"; }
std::string MlpParams::bias_name(std::size_t layer) { return "layer" + std::to_string(layer) + ".bias"; }

MlpParams init_mlp(const MlpConfig& config) {
  config.check();
  MlpParams params;
  params.config = config;
  Rng rng(config.seed);
  std::size_t fan_in = config.input_dim;
  std::vector<std::size_t> widths = config.hidden_dims;
  widths.push_back(config.classes);
  for (std::size_t width : widths) {
    Tensor w = Tensor::zeros({fan_in, width});
    const double scale = 1.0 / std::sqrt(static_cast<double>(fan_in));
    for (double& v : w.data()) {
      v = scale * rng.normal();
    }
    params.weights.push_back(std::move(w));
    params.biases.push_back(Tensor::zeros({width}));
    fan_in = width;
  }
  return params;
}

MlpVars register_params(Tape& tape, const MlpParams& params) {
  MlpVars vars;
  for (std::size_t l = 0; l < params.layer_count(); ++l) {
    vars.weights.push_back(tape.parameter(MlpParams::weight_name(l), params.weights[l]));
    vars.biases.push_back(tape.parameter(MlpParams::bias_name(l), params.biases[l]));
  }
  return vars;
}

namespace {

Tensor dropout_mask(const Shape& shape, double rate, std::uint64_t seed) {
  Rng rng(seed);
  const double keep_scale = 1.0 / (1.0 - rate);
  Tensor mask = Tensor::zeros(shape);
  for (double& v : mask.data()) {
    v = rng.uniform() < rate ? 0.0 : keep_scale;
  }
  return mask;
}

}  // namespace

Var forward(Tape& tape, const MlpParams& params, const MlpVars& vars, const Tensor& batch, bool train_mode,
            std::uint64_t dropout_seed) {
  if (batch.rank() != 2 || batch.shape()[1] != params.config.input_dim) {
    throw ContractViolation("forward: batch shape " + shape_string(batch.shape()) + " does not match input_dim " +
                            std::to_string(params.config.input_dim));
  }
  Var x = tape.constant(batch);
  const std::size_t layers = params.layer_count();
  const double rate = params.config.dropout_rate;
  for (std::size_t l = 0; l < layers; ++l) {
    x = add_broadcast(matmul(x, vars.weights[l]), vars.biases[l]);
    if (l + 1 == layers) {
      break;
    }
    x = relu(x);
    if (train_mode && rate > 0.0) {
      x = elementwise_mul(x, tape.constant(dropout_mask(x.shape(), rate, mix_seed(dropout_seed, l))));
    }
  }
  return x;
}

Tensor forward(const MlpParams& params, const Tensor& batch, bool train_mode, std::uint64_t dropout_seed) {
  Tape tape;
  MlpVars vars;
  for (std::size_t l = 0; l < params.layer_count(); ++l) {
    vars.weights.push_back(tape.constant(params.weights[l]));
    vars.biases.push_back(tape.constant(params.biases[l]));
  }
  return forward(tape, params, vars, batch, train_mode, dropout_seed).value();
}

Tensor predict_proba(const MlpParams& params, const Tensor& batch) {
  Tape tape;
  return row_softmax(tape.constant(forward(params, batch, false, 0))).value();
}

std::vector<int> argmax_rows(const Tensor& scores) {
  std::vector<int> out(scores.rows());
  for (std::size_t r = 0; r < scores.rows(); ++r) {
    const auto row = scores.row(r);
    std::size_t best = 0;
    for (std::size_t j = 1; j < row.size(); ++j) {
      if (row[j] > row[best]) {
        best = j;
      }
    }
    out[r] = static_cast<int>(best);
  }
  return out;
}

void save_checkpoint(const MlpParams& params, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) {
    throw IoError("cannot open " + path.string() + " for writing");
  }
  const MlpConfig& c = params.config;
  out << "mlp 1\n";
  out << "input_dim " << c.input_dim << '\n';
  out << "hidden";
  for (std::size_t h : c.hidden_dims) {
    out << ' ' << h;
  }
  out << '\n';
  out << "classes " << c.classes << '\n';
  out << "dropout " << format_double(c.dropout_rate) << '\n';
  out << "seed " << c.seed << '\n';
  auto write_tensor = [&](const std::string& name, const Tensor& t) {
    out << name;
    for (std::size_t e : t.shape()) {
      out << ' ' << e;
    }
    out << '\n';
    for (std::size_t i = 0; i < t.size(); ++i) {
      out << (i ? " " : "") << format_double(t[i]);
    }
    out << '\n';
  };
  for (std::size_t l = 0; l < params.layer_count(); ++l) {
    write_tensor(MlpParams::weight_name(l), params.weights[l]);
    write_tensor(MlpParams::bias_name(l), params.biases[l]);
  }
  if (!out) {
    throw IoError("write failed for " + path.string());
  }
}

MlpParams load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) {
    throw IoError("cannot open " + path.string());
  }
  const std::string source = path.string();
  std::size_t line_no = 0;
  std::string line;
  auto next_fields = [&](const std::string& key) {
    if (!std::getline(in, line)) {
      throw ParseError(source, line_no + 1, "unexpected end of file, expected '" + key + "'");
    }
    ++line_no;
    std::istringstream fields(line);
    std::string head;
    fields >> head;
    if (head != key) {
      throw ParseError(source, line_no, "expected '" + key + "', got '" + head + "'");
    }
    std::vector<std::string> rest;
    std::string tok;
    while (fields >> tok) {
      rest.push_back(tok);
    }
    return rest;
  };
  auto one_int = [&](const std::string& key) {
    auto f = next_fields(key);
    if (f.size() != 1) {
      throw ParseError(source, line_no, "expected one value for '" + key + "'");
    }
    try {
      return static_cast<std::size_t>(parse_int(f[0]));
    } catch (const std::invalid_argument& e) {
      throw ParseError(source, line_no, e.what());
    }
  };

  auto version = next_fields("mlp");
  if (version.size() != 1 || version[0] != "1") {
    throw ParseError(source, line_no, "unsupported checkpoint version");
  }
  MlpConfig config;
  try {
    config.input_dim = one_int("input_dim");
    config.hidden_dims.clear();
    for (const auto& h : next_fields("hidden")) {
      config.hidden_dims.push_back(static_cast<std::size_t>(parse_int(h)));
    }
    config.classes = one_int("classes");
    auto dropout = next_fields("dropout");
    config.dropout_rate = parse_double(dropout.at(0));
    config.seed = static_cast<std::uint64_t>(std::stoull(next_fields("seed").at(0)));
  } catch (const ParseError&) {
    throw;
  } catch (const std::exception& e) {
    throw ParseError(source, line_no, e.what());
  }
  config.check();

  MlpParams params = init_mlp(config);
  auto read_tensor = [&](const std::string& name, Tensor& target) {
    auto dims = next_fields(name);
    Shape shape;
    for (const auto& d : dims) {
      shape.push_back(static_cast<std::size_t>(parse_int(d)));
    }
    if (shape != target.shape()) {
      throw ParseError(source, line_no, name + " has shape " + shape_string(shape) + ", expected " +
                                            shape_string(target.shape()));
    }
    if (!std::getline(in, line)) {
      throw ParseError(source, line_no + 1, "missing values for " + name);
    }
    ++line_no;
    std::istringstream values(line);
    std::string tok;
    std::size_t i = 0;
    while (values >> tok) {
      if (i >= target.size()) {
        throw ParseError(source, line_no, "too many values for " + name);
      }
      try {
        target[i++] = parse_double(tok);
      } catch (const std::invalid_argument& e) {
        throw ParseError(source, line_no, e.what());
      }
    }
    if (i != target.size()) {
      throw ParseError(source, line_no, "too few values for " + name);
    }
  };
  for (std::size_t l = 0; l < params.layer_count(); ++l) {
    read_tensor(MlpParams::weight_name(l), params.weights[l]);
    read_tensor(MlpParams::bias_name(l), params.biases[l]);
  }
  return params;
}

}  // namespace lnl
