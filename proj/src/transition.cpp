#include "lnl/transition.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>

#include "lnl/errors.hpp"
#include "lnl/format.hpp"

namespace lnl {

TransitionMatrix::TransitionMatrix(Tensor entries) : entries_(std::move(entries)) {
  if (entries_.rank() != 2 || entries_.shape()[0] != entries_.shape()[1] || entries_.shape()[0] == 0) {
    throw ContractViolation("transition matrix must be square and nonempty, got " + shape_string(entries_.shape()));
  }
  classes_ = entries_.shape()[0];
}

TransitionMatrix::TransitionMatrix(std::size_t classes, std::vector<double> row_major)
    : TransitionMatrix(Tensor::matrix(classes, classes, std::move(row_major))) {}

TransitionMatrix TransitionMatrix::identity(std::size_t classes) {
  Tensor t = Tensor::zeros({classes, classes});
  for (std::size_t i = 0; i < classes; ++i) {
    t(i, i) = 1.0;
  }
  return TransitionMatrix(std::move(t));
}

TransitionMatrix TransitionMatrix::circulant(std::size_t classes, double rate) {
  Tensor t = Tensor::zeros({classes, classes});
  for (std::size_t i = 0; i < classes; ++i) {
    t(i, i) = 1.0 - rate;
    t(i, (i + 1) % classes) += rate;
  }
  return TransitionMatrix(std::move(t));
}

TransitionMatrix TransitionMatrix::symmetric(std::size_t classes, double rate) {
  if (classes < 2) {
    throw ContractViolation("symmetric noise needs at least two classes");
  }
  Tensor t = Tensor::filled({classes, classes}, rate / static_cast<double>(classes - 1));
  for (std::size_t i = 0; i < classes; ++i) {
    t(i, i) = 1.0 - rate;
  }
  return TransitionMatrix(std::move(t));
}

TransitionMatrix TransitionMatrix::preset(const std::string& spec, std::size_t classes) {
  if (spec == "identity") {
    return identity(classes);
  }
  const auto colon = spec.find(':');
  if (colon != std::string::npos) {
    const std::string kind = spec.substr(0, colon);
    const double rate = parse_double(std::string_view(spec).substr(colon + 1));
    if (kind == "circulant") {
      return circulant(classes, rate);
    }
    if (kind == "symmetric") {
      return symmetric(classes, rate);
    }
  }
  throw ContractViolation("unknown matrix preset '" + spec + "'");
}

TransitionMatrix TransitionMatrix::validated() const {
  const ValidationReport report = validate(entries_);
  if (!report.ok()) {
    throw ValidationError("transition matrix is not row-stochastic: " + report.describe());
  }
  TransitionMatrix copy = *this;
  copy.validated_ = true;
  return copy;
}

std::string Violation::describe() const {
  std::ostringstream out;
  switch (kind) {
    case Kind::non_finite:
      out << "cell (" << row << ", " << col << ") is not finite";
      break;
    case Kind::negative_entry:
      out << "cell (" << row << ", " << col << ") is negative: " << format_double(value);
      break;
    case Kind::row_sum:
      out << "row " << row << " sums to " << format_double(value);
      break;
  }
  return out.str();
}

std::string ValidationReport::describe() const {
  std::string out;
  for (const auto& v : violations) {
    if (!out.empty()) {
      out += "; ";
    }
    out += v.describe();
  }
  return out;
}

ValidationReport validate(const Tensor& matrix, double tolerance) {
  if (matrix.rank() != 2 || matrix.shape()[0] != matrix.shape()[1]) {
    throw ContractViolation("validate: matrix must be square, got " + shape_string(matrix.shape()));
  }
  ValidationReport report;
  const std::size_t c = matrix.shape()[0];
  for (std::size_t i = 0; i < c; ++i) {
    double row_sum = 0.0;
    for (std::size_t j = 0; j < c; ++j) {
      const double v = matrix(i, j);
      if (!std::isfinite(v)) {
        report.violations.push_back({Violation::Kind::non_finite, i, j, v});
      } else if (v < 0.0) {
        report.violations.push_back({Violation::Kind::negative_entry, i, j, v});
      }
      row_sum += v;
    }
    if (!(std::abs(row_sum - 1.0) <= tolerance)) {
      report.violations.push_back({Violation::Kind::row_sum, i, 0, row_sum});
    }
  }
  return report;
}

ValidationReport validate(const TransitionMatrix& matrix, double tolerance) {
  return validate(matrix.tensor(), tolerance);
}

const char* revision_mode_name(RevisionMode mode) {
  return mode == RevisionMode::alpha ? "alpha" : "softmax";
}

RevisionMode parse_revision_mode(const std::string& name) {
  if (name == "alpha") {
    return RevisionMode::alpha;
  }
  if (name == "softmax") {
    return RevisionMode::softmax;
  }
  throw ContractViolation("unknown revision mode '" + name + "' (expected alpha or softmax)");
}

Tensor effective_matrix(const TransitionMatrix& t_hat, const Tensor& delta, const RevisionSettings& settings) {
  const Tensor& base = t_hat.tensor();
  if (delta.shape() != base.shape()) {
    throw ContractViolation("effective_matrix: delta shape " + shape_string(delta.shape()) + " vs " +
                            shape_string(base.shape()));
  }
  Tensor out = base;
  if (settings.mode == RevisionMode::alpha) {
    for (std::size_t i = 0; i < out.size(); ++i) {
      const double v = base[i] + settings.alpha * delta[i];
      out[i] = v > 0.0 ? v : 0.0;
    }
    return out;
  }
  for (std::size_t i = 0; i < out.size(); ++i) {
    out[i] = base[i] + delta[i];
  }
  for (std::size_t r = 0; r < out.rows(); ++r) {
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
  return out;
}

Tensor renormalize_rows(const Tensor& matrix) {
  Tensor out = matrix;
  for (std::size_t r = 0; r < out.rows(); ++r) {
    auto row = out.row(r);
    const double total = std::accumulate(row.begin(), row.end(), 0.0);
    if (total <= 0.0) {
      throw DomainError("renormalize_rows: row " + std::to_string(r) + " has nonpositive sum");
    }
    for (double& v : row) {
      v /= total;
    }
  }
  return out;
}

TransitionMatrix estimate_anchor(const Tensor& posteriors, const AnchorSettings& settings) {
  if (posteriors.rank() != 2) {
    throw ContractViolation("estimate_anchor: posteriors must be n x c");
  }
  if (!(settings.percentile > 0.0 && settings.percentile <= 100.0)) {
    throw ContractViolation("estimate_anchor: percentile must be in (0, 100]");
  }
  if (settings.top_k == 0) {
    throw ContractViolation("estimate_anchor: top_k must be at least 1");
  }
  const std::size_t n = posteriors.shape()[0];
  const std::size_t c = posteriors.shape()[1];
  if (n < settings.top_k) {
    throw ContractViolation("estimate_anchor: " + std::to_string(n) + " samples is fewer than top_k=" +
                            std::to_string(settings.top_k));
  }

  const auto rank = static_cast<std::size_t>(
      std::llround((100.0 - settings.percentile) / 100.0 * static_cast<double>(n - 1)));
  const std::size_t half = settings.top_k / 2;
  std::size_t start = rank > half ? rank - half : 0;
  start = std::min(start, n - settings.top_k);

  Tensor estimate = Tensor::zeros({c, c});
  std::vector<std::size_t> order(n);
  for (std::size_t cls = 0; cls < c; ++cls) {
    std::iota(order.begin(), order.end(), std::size_t{0});
    // Stable so equal scores keep sample order and the result is reproducible.
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return posteriors(a, cls) > posteriors(b, cls); });
    auto row = estimate.row(cls);
    for (std::size_t k = start; k < start + settings.top_k; ++k) {
      const auto sample = posteriors.row(order[k]);
      for (std::size_t j = 0; j < c; ++j) {
        row[j] += sample[j];
      }
    }
    for (double& v : row) {
      v /= static_cast<double>(settings.top_k);
    }
  }
  return TransitionMatrix(std::move(estimate));
}

double rre(const Tensor& reference, const Tensor& estimate) {
  if (reference.shape() != estimate.shape()) {
    throw ContractViolation("rre: shape mismatch " + shape_string(reference.shape()) + " vs " +
                            shape_string(estimate.shape()));
  }
  double ref_sq = 0.0;
  double diff_sq = 0.0;
  for (std::size_t i = 0; i < reference.size(); ++i) {
    ref_sq += reference[i] * reference[i];
    const double d = reference[i] - estimate[i];
    diff_sq += d * d;
  }
  if (ref_sq == 0.0) {
    throw DomainError("rre: reference matrix has zero Frobenius norm");
  }
  return std::sqrt(diff_sq) / std::sqrt(ref_sq);
}

double rre(const TransitionMatrix& reference, const TransitionMatrix& estimate) {
  return rre(reference.tensor(), estimate.tensor());
}

Tensor mean_matrix(std::span<const Tensor> estimates) {
  if (estimates.empty()) {
    throw ContractViolation("mean_matrix: no estimates");
  }
  Tensor out = Tensor::zeros(estimates.front().shape());
  for (const auto& e : estimates) {
    if (e.shape() != out.shape()) {
      throw ContractViolation("mean_matrix: mixed shapes " + shape_string(e.shape()) + " and " +
                              shape_string(out.shape()));
    }
    for (std::size_t i = 0; i < out.size(); ++i) {
      out[i] += e[i];
    }
  }
  const double count = static_cast<double>(estimates.size());
  for (double& v : out.data()) {
    v /= count;
  }
  return out;
}

void save_matrix(const Tensor& matrix, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) {
    throw IoError("cannot open " + path.string() + " for writing");
  }
  for (std::size_t r = 0; r < matrix.rows(); ++r) {
    const auto row = matrix.row(r);
    for (std::size_t j = 0; j < row.size(); ++j) {
      out << (j ? " " : "") << format_double(row[j]);
    }
    out << '\n';
  }
  if (!out) {
    throw IoError("write failed for " + path.string());
  }
}

Tensor load_matrix_tensor(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) {
    throw IoError("cannot open " + path.string());
  }
  std::vector<std::vector<double>> rows;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (trim(line).empty()) {
      continue;
    }
    std::istringstream fields(line);
    std::vector<double> row;
    std::string token;
    while (fields >> token) {
      try {
        row.push_back(parse_double(token));
      } catch (const std::invalid_argument& e) {
        throw ParseError(path.string(), line_no, e.what());
      }
    }
    if (!rows.empty() && row.size() != rows.front().size()) {
      throw ParseError(path.string(), line_no,
                       "expected " + std::to_string(rows.front().size()) + " values, got " + std::to_string(row.size()));
    }
    rows.push_back(std::move(row));
  }
  if (rows.empty() || rows.size() != rows.front().size()) {
    throw ParseError(path.string(), line_no, "matrix must be square and nonempty");
  }
  std::vector<double> flat;
  for (const auto& r : rows) {
    flat.insert(flat.end(), r.begin(), r.end());
  }
  return Tensor::matrix(rows.size(), rows.size(), std::move(flat));
}

TransitionMatrix load_matrix(const std::filesystem::path& path, bool check) {
  TransitionMatrix m(load_matrix_tensor(path));
  return check ? m.validated() : m;
}

}  // namespace lnl
