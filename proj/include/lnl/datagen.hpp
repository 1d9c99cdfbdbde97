#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "lnl/tensor.hpp"
#include "lnl/transition.hpp"

namespace lnl {

struct LabeledDataset {
  Tensor features;  // n x d
  std::vector<int> clean_labels;
  std::optional<std::vector<int>> noisy_labels;
  std::size_t classes = 0;
  std::string provenance;

  std::size_t size() const noexcept { return clean_labels.size(); }
  std::size_t dim() const { return features.rank() == 2 ? features.shape()[1] : 0; }

  // Throws ContractViolation on any broken invariant.
  void check() const;

  // Provenance is descriptive and does not take part in equality.
  friend bool operator==(const LabeledDataset& a, const LabeledDataset& b) {
    return a.features == b.features && a.clean_labels == b.clean_labels && a.noisy_labels == b.noisy_labels &&
           a.classes == b.classes;
  }
};

struct BlobSpec {
  std::size_t classes = 4;
  std::size_t dim = 16;
  std::size_t n_per_class = 2500;
  Tensor class_means;  // classes x dim
  double noise_sigma = 1.0;
  std::uint64_t seed = 0;

  // Means at scale * e_k, with scale chosen so every pair of means is
  // `separation * noise_sigma` apart. Needs dim >= classes.
  static BlobSpec simplex(std::size_t classes, std::size_t dim, std::size_t n_per_class, double separation,
                          double noise_sigma, std::uint64_t seed);

  void check() const;
};

inline constexpr double kDefaultSeparation = 6.0;

// Samples are emitted class by class: class_means[k] + N(0, noise_sigma^2 I).
LabeledDataset generate_blobs(const BlobSpec& spec);

// Draws noisy label j for clean label i with probability T(i, j).
LabeledDataset inject_noise(const LabeledDataset& data, const TransitionMatrix& t, std::uint64_t seed);

// Entry (i, j) = #(clean = i and noisy = j) / #(clean = i).
Tensor empirical_flip_matrix(const LabeledDataset& data);

// Shuffled disjoint partition; the first part holds round(n * train_fraction) samples.
std::pair<LabeledDataset, LabeledDataset> split(const LabeledDataset& data, double train_fraction,
                                                std::uint64_t seed);

LabeledDataset subset(const LabeledDataset& data, std::span<const std::size_t> indices);

// Text format: header "n d c", then one line per sample
// "clean,noisy,f1,...,fd" with noisy written as "-" when absent.
void save_dataset(const LabeledDataset& data, const std::filesystem::path& path);
LabeledDataset load_dataset(const std::filesystem::path& path);

}  // namespace lnl
