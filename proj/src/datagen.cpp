#include "lnl/datagen.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>

#include "lnl/errors.hpp"
#include "lnl/format.hpp"
#include "lnl/rng.hpp"

namespace lnl {

void LabeledDataset::check() const {
  if (classes < 2) {
    throw ContractViolation("dataset needs at least two classes");
  }
  if (features.rank() != 2 || features.shape()[0] != clean_labels.size()) {
    throw ContractViolation("features must be n x d with one row per label");
  }
  if (noisy_labels && noisy_labels->size() != clean_labels.size()) {
    throw ContractViolation("noisy label count differs from clean label count");
  }
  auto in_range = [&](int label) { return label >= 0 && static_cast<std::size_t>(label) < classes; };
  for (std::size_t i = 0; i < clean_labels.size(); ++i) {
    if (!in_range(clean_labels[i]) || (noisy_labels && !in_range((*noisy_labels)[i]))) {
      throw ContractViolation("label out of range at sample " + std::to_string(i));
    }
  }
  if (!features.all_finite()) {
    throw ContractViolation("dataset features contain non-finite values");
  }
}

BlobSpec BlobSpec::simplex(std::size_t classes, std::size_t dim, std::size_t n_per_class, double separation,
                           double noise_sigma, std::uint64_t seed) {
  if (dim < classes) {
    throw ContractViolation("simplex means need dim >= classes");
  }
  BlobSpec spec;
  spec.classes = classes;
  spec.dim = dim;
  spec.n_per_class = n_per_class;
  spec.noise_sigma = noise_sigma;
  spec.seed = seed;
  spec.class_means = Tensor::zeros({classes, dim});
  const double scale = separation * noise_sigma / std::sqrt(2.0);
  for (std::size_t k = 0; k < classes; ++k) {
    spec.class_means(k, k) = scale;
  }
  return spec;
}

void BlobSpec::check() const {
  if (classes < 2 || dim < 1 || n_per_class < 1) {
    throw ContractViolation("blob spec needs classes >= 2, dim >= 1, n_per_class >= 1");
  }
  if (!(noise_sigma > 0.0)) {
    throw ContractViolation("blob spec noise_sigma must be positive");
  }
  if (class_means.shape() != Shape{classes, dim}) {
    throw ContractViolation("class_means must be " + shape_string({classes, dim}));
  }
}

LabeledDataset generate_blobs(const BlobSpec& spec) {
  spec.check();
  Rng rng(spec.seed);
  const std::size_t n = spec.classes * spec.n_per_class;
  LabeledDataset out;
  out.classes = spec.classes;
  out.features = Tensor::zeros({n, spec.dim});
  out.clean_labels.resize(n);
  out.provenance = "blobs(c=" + std::to_string(spec.classes) + ", d=" + std::to_string(spec.dim) +
                   ", n_per_class=" + std::to_string(spec.n_per_class) + ", seed=" + std::to_string(spec.seed) + ")";
  std::size_t i = 0;
  for (std::size_t k = 0; k < spec.classes; ++k) {
    for (std::size_t s = 0; s < spec.n_per_class; ++s, ++i) {
      out.clean_labels[i] = static_cast<int>(k);
      auto row = out.features.row(i);
      for (std::size_t j = 0; j < spec.dim; ++j) {
        row[j] = spec.class_means(k, j) + spec.noise_sigma * rng.normal();
      }
    }
  }
  return out;
}

LabeledDataset inject_noise(const LabeledDataset& data, const TransitionMatrix& t, std::uint64_t seed) {
  if (t.dim() != data.classes) {
    throw ContractViolation("inject_noise: matrix is " + std::to_string(t.dim()) + "x" + std::to_string(t.dim()) +
                            " but dataset has " + std::to_string(data.classes) + " classes");
  }
  const ValidationReport report = validate(t);
  if (!report.ok()) {
    throw ContractViolation("inject_noise: matrix is not row-stochastic: " + report.describe());
  }
  Rng rng(seed);
  LabeledDataset out = data;
  std::vector<int> noisy(data.size());
  for (std::size_t i = 0; i < data.size(); ++i) {
    const auto clean = static_cast<std::size_t>(data.clean_labels[i]);
    const double u = rng.uniform();
    double cumulative = 0.0;
    std::size_t pick = t.dim() - 1;
    for (std::size_t j = 0; j < t.dim(); ++j) {
      cumulative += t(clean, j);
      if (u < cumulative) {
        pick = j;
        break;
      }
    }
    // Guard against rounding leaving u above the final cumulative sum.
    while (t(clean, pick) == 0.0 && pick > 0) {
      --pick;
    }
    noisy[i] = static_cast<int>(pick);
  }
  out.noisy_labels = std::move(noisy);
  return out;
}

Tensor empirical_flip_matrix(const LabeledDataset& data) {
  if (!data.noisy_labels) {
    throw ContractViolation("empirical_flip_matrix: dataset has no noisy labels");
  }
  const std::size_t c = data.classes;
  Tensor counts = Tensor::zeros({c, c});
  std::vector<double> totals(c, 0.0);
  for (std::size_t i = 0; i < data.size(); ++i) {
    const auto clean = static_cast<std::size_t>(data.clean_labels[i]);
    const auto noisy = static_cast<std::size_t>((*data.noisy_labels)[i]);
    counts(clean, noisy) += 1.0;
    totals[clean] += 1.0;
  }
  for (std::size_t i = 0; i < c; ++i) {
    if (totals[i] == 0.0) {
      throw ContractViolation("empirical_flip_matrix: class " + std::to_string(i) + " has no samples");
    }
    for (double& v : counts.row(i)) {
      v /= totals[i];
    }
  }
  return counts;
}

LabeledDataset subset(const LabeledDataset& data, std::span<const std::size_t> indices) {
  const std::size_t d = data.dim();
  LabeledDataset out;
  out.classes = data.classes;
  out.provenance = data.provenance;
  out.features = Tensor::zeros({indices.size(), d});
  out.clean_labels.reserve(indices.size());
  std::vector<int> noisy;
  for (std::size_t k = 0; k < indices.size(); ++k) {
    const std::size_t i = indices[k];
    const auto src = data.features.row(i);
    std::copy(src.begin(), src.end(), out.features.row(k).begin());
    out.clean_labels.push_back(data.clean_labels[i]);
    if (data.noisy_labels) {
      noisy.push_back((*data.noisy_labels)[i]);
    }
  }
  if (data.noisy_labels) {
    out.noisy_labels = std::move(noisy);
  }
  return out;
}

std::pair<LabeledDataset, LabeledDataset> split(const LabeledDataset& data, double train_fraction,
                                                std::uint64_t seed) {
  if (!(train_fraction > 0.0 && train_fraction < 1.0)) {
    throw ContractViolation("split: train_fraction must be in (0, 1)");
  }
  const std::size_t n = data.size();
  const auto first = static_cast<std::size_t>(std::llround(static_cast<double>(n) * train_fraction));
  if (first == 0 || first == n) {
    throw ContractViolation("split: fraction " + format_double(train_fraction) + " of " + std::to_string(n) +
                            " samples leaves an empty partition");
  }
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  Rng rng(seed);
  for (std::size_t i = n - 1; i > 0; --i) {
    std::swap(order[i], order[rng.below(i + 1)]);
  }
  const std::span<const std::size_t> all(order);
  return {subset(data, all.first(first)), subset(data, all.subspan(first))};
}

void save_dataset(const LabeledDataset& data, const std::filesystem::path& path) {
  data.check();
  std::ofstream out(path);
  if (!out) {
    throw IoError("cannot open " + path.string() + " for writing");
  }
  out << data.size() << ' ' << data.dim() << ' ' << data.classes << '\n';
  for (std::size_t i = 0; i < data.size(); ++i) {
    out << data.clean_labels[i] << ',';
    if (data.noisy_labels) {
      out << (*data.noisy_labels)[i];
    } else {
      out << '-';
    }
    for (double v : data.features.row(i)) {
      out << ',' << format_double(v);
    }
    out << '\n';
  }
  if (!out) {
    throw IoError("write failed for " + path.string());
  }
}

LabeledDataset load_dataset(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) {
    throw IoError("cannot open " + path.string());
  }
  const std::string source = path.string();
  std::string line;
  if (!std::getline(in, line)) {
    throw ParseError(source, 1, "missing header");
  }
  std::size_t n = 0;
  std::size_t d = 0;
  std::size_t c = 0;
  {
    std::istringstream header(line);
    std::string a, b, k, extra;
    if (!(header >> a >> b >> k) || (header >> extra)) {
      throw ParseError(source, 1, "header must be 'n d c'");
    }
    try {
      const long long nn = parse_int(a), dd = parse_int(b), cc = parse_int(k);
      if (nn < 0 || dd < 1 || cc < 2) {
        throw std::invalid_argument("header values out of range");
      }
      n = static_cast<std::size_t>(nn);
      d = static_cast<std::size_t>(dd);
      c = static_cast<std::size_t>(cc);
    } catch (const std::invalid_argument& e) {
      throw ParseError(source, 1, std::string("malformed header: ") + e.what());
    }
  }

  LabeledDataset data;
  data.classes = c;
  data.provenance = "file:" + source;
  data.features = Tensor::zeros({n, d});
  data.clean_labels.resize(n);
  std::vector<int> noisy(n);
  bool any_noisy = false;
  bool any_missing = false;

  auto parse_label = [&](std::string_view text, std::size_t line_no, const char* what) {
    long long v = 0;
    try {
      v = parse_int(text);
    } catch (const std::invalid_argument& e) {
      throw ParseError(source, line_no, std::string(what) + ": " + e.what());
    }
    if (v < 0 || v >= static_cast<long long>(c)) {
      throw ParseError(source, line_no,
                       std::string(what) + " " + std::to_string(v) + " out of range [0, " + std::to_string(c) + ")");
    }
    return static_cast<int>(v);
  };

  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t line_no = i + 2;
    if (!std::getline(in, line)) {
      throw ParseError(source, line_no, "expected " + std::to_string(n) + " samples, file ended after " +
                                            std::to_string(i));
    }
    std::vector<std::string_view> fields;
    std::string_view rest(line);
    while (true) {
      const auto comma = rest.find(',');
      fields.push_back(rest.substr(0, comma));
      if (comma == std::string_view::npos) {
        break;
      }
      rest.remove_prefix(comma + 1);
    }
    if (fields.size() != d + 2) {
      throw ParseError(source, line_no,
                       "expected " + std::to_string(d + 2) + " fields, got " + std::to_string(fields.size()));
    }
    data.clean_labels[i] = parse_label(fields[0], line_no, "clean label");
    if (trim(fields[1]) == "-") {
      any_missing = true;
    } else {
      noisy[i] = parse_label(fields[1], line_no, "noisy label");
      any_noisy = true;
    }
    auto row = data.features.row(i);
    for (std::size_t j = 0; j < d; ++j) {
      try {
        row[j] = parse_double(fields[j + 2]);
      } catch (const std::invalid_argument& e) {
        throw ParseError(source, line_no, e.what());
      }
      if (!std::isfinite(row[j])) {
        throw ParseError(source, line_no, "non-finite feature");
      }
    }
  }
  if (any_noisy && any_missing) {
    throw ParseError(source, n + 1, "noisy labels must be present for every sample or for none");
  }
  if (std::getline(in, line) && !trim(line).empty()) {
    throw ParseError(source, n + 2, "unexpected data after " + std::to_string(n) + " samples");
  }
  if (any_noisy) {
    data.noisy_labels = std::move(noisy);
  }
  return data;
}

}  // namespace lnl
