#pragma once

#include <cstdint>
#include <filesystem>
#include <random>
#include <span>
#include <utility>
#include <vector>

#include "json.hpp"

#include "practise/tensor.hpp"

namespace practise {

enum class Split : std::uint8_t { train, heldout };

// Per-feature affine map applied to raw features: (x - mean) / stddev.
struct Standardization {
  std::vector<double> mean;
  std::vector<double> stddev;
};

struct Dataset {
  Tensor features;  // n x d
  std::vector<int> labels;
  std::vector<Split> splits;
  int num_classes = 0;
  Standardization standardization;

  std::size_t size() const { return labels.size(); }
  std::size_t dim() const { return features.cols(); }
  Dataset rows(std::span<const std::size_t> indices) const;
  Dataset select(Split split) const;
  std::vector<std::size_t> indices_of(Split split) const;
  void validate() const;
};

struct MixtureParams {
  int num_classes = 4;
  std::size_t dim = 16;
  std::size_t train_per_class = 250;
  std::size_t heldout_per_class = 250;
  double class_sep = 3.0;
  std::uint64_t seed = 0;
};

// K unit-covariance Gaussian clusters whose means lie on a random sphere of
// radius class_sep. Features are standardized with train-split statistics.
Dataset generate_gaussian_mixture(const MixtureParams& params);

// m train rows sampled uniformly without replacement.
Dataset sample_tiny(const Dataset& dataset, std::size_t m, std::uint64_t seed);
// Two disjoint tiny sets of m rows each.
std::pair<Dataset, Dataset> sample_tiny_disjoint(const Dataset& dataset, std::size_t m, std::uint64_t seed);
// The train-row indices sample_tiny would draw, exposed for tests.
std::vector<std::size_t> sample_tiny_indices(const Dataset& dataset, std::size_t m, std::uint64_t seed);

// Header `f0,...,f{d-1},label`, with an optional trailing `split` column.
void write_csv(const Dataset& dataset, const std::filesystem::path& path);
Dataset read_csv(const std::filesystem::path& path);

nlohmann::json dataset_manifest(const Dataset& dataset, const MixtureParams& params);

// Draws shuffled minibatches epoch by epoch. Batches never straddle epochs;
// batch size is clipped to the dataset size.
class MinibatchSampler {
 public:
  MinibatchSampler(std::size_t n, std::size_t batch, std::uint64_t seed);
  std::span<const std::size_t> next();
  std::size_t batch_size() const { return batch_; }

 private:
  void reshuffle();
  std::size_t n_;
  std::size_t batch_;
  std::size_t cursor_ = 0;
  std::vector<std::size_t> order_;
  std::mt19937_64 rng_;
};

// Derives an independent stream seed from (master, stream index).
std::uint64_t derive_seed(std::uint64_t master, std::uint64_t stream);

}  // namespace practise
