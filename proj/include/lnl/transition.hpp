#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "lnl/tensor.hpp"

namespace lnl {

inline constexpr double kRowSumTolerance = 1e-6;

// c x c matrix with entry (i, j) = P(noisy = j | clean = i).
//
// Construction never validates; validated() returns a copy carrying the
// validated flag or throws ValidationError with the full violation report.
class TransitionMatrix {
 public:
  TransitionMatrix() = default;
  explicit TransitionMatrix(Tensor entries);
  TransitionMatrix(std::size_t classes, std::vector<double> row_major);

  static TransitionMatrix identity(std::size_t classes);
  // Row i keeps 1 - rate on the diagonal and moves `rate` to column i+1 (mod c).
  static TransitionMatrix circulant(std::size_t classes, double rate);
  // Row i keeps 1 - rate on the diagonal and spreads `rate` evenly elsewhere.
  static TransitionMatrix symmetric(std::size_t classes, double rate);
  // "identity", "circulant:<rate>" or "symmetric:<rate>".
  static TransitionMatrix preset(const std::string& spec, std::size_t classes);

  std::size_t dim() const noexcept { return classes_; }
  double operator()(std::size_t i, std::size_t j) const { return entries_(i, j); }
  const Tensor& tensor() const noexcept { return entries_; }
  bool is_validated() const noexcept { return validated_; }

  TransitionMatrix validated() const;

  friend bool operator==(const TransitionMatrix& a, const TransitionMatrix& b) { return a.entries_ == b.entries_; }

 private:
  std::size_t classes_ = 0;
  Tensor entries_;
  bool validated_ = false;
};

struct Violation {
  enum class Kind : std::uint8_t { non_finite, negative_entry, row_sum };
  Kind kind;
  std::size_t row;
  std::size_t col;  // unused for row_sum
  double value;     // offending entry or row sum

  std::string describe() const;
};

struct ValidationReport {
  std::vector<Violation> violations;
  bool ok() const noexcept { return violations.empty(); }
  std::string describe() const;
};

// Checks nonnegativity and row sums within `tolerance`, reporting every
// violating cell and row.
ValidationReport validate(const Tensor& matrix, double tolerance = kRowSumTolerance);
ValidationReport validate(const TransitionMatrix& matrix, double tolerance = kRowSumTolerance);

enum class RevisionMode : std::uint8_t { alpha, softmax };

struct RevisionSettings {
  RevisionMode mode = RevisionMode::alpha;
  double alpha = 0.01;
};

const char* revision_mode_name(RevisionMode mode);
RevisionMode parse_revision_mode(const std::string& name);

// softmax: row-softmax(T_hat + delta); alpha: max(0, T_hat + alpha * delta)
// without row renormalisation.
Tensor effective_matrix(const TransitionMatrix& t_hat, const Tensor& delta, const RevisionSettings& settings);

// Divides each row by its sum. Exposed for callers that want normalised
// alpha-mode matrices; the default pipeline never calls it.
Tensor renormalize_rows(const Tensor& matrix);

struct AnchorSettings {
  double percentile = 97.0;
  std::size_t top_k = 1;
};

// Anchor-point estimate from noisy-class posteriors (n x c).
//
// For class i the samples are ranked by posterior[:, i] descending. The rank
// at the requested percentile is round((100 - percentile) / 100 * (n - 1)),
// so percentile 100 picks the most confident sample. Row i is the mean of
// the full posterior rows of the top_k samples centred on that rank.
TransitionMatrix estimate_anchor(const Tensor& posteriors, const AnchorSettings& settings);

// ||reference - estimate||_F / ||reference||_F.
double rre(const Tensor& reference, const Tensor& estimate);
double rre(const TransitionMatrix& reference, const TransitionMatrix& estimate);

// Element-wise arithmetic mean.
Tensor mean_matrix(std::span<const Tensor> estimates);

// Matrix file: c lines of c space-separated decimals.
void save_matrix(const Tensor& matrix, const std::filesystem::path& path);
Tensor load_matrix_tensor(const std::filesystem::path& path);
// Loads and, unless check is false, validates.
TransitionMatrix load_matrix(const std::filesystem::path& path, bool check = true);

}  // namespace lnl
