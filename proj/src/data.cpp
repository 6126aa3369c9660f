#include "practise/data.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <numeric>
#include <set>
#include <sstream>
#include <string>

#include "practise/errors.hpp"

namespace practise {

std::uint64_t derive_seed(std::uint64_t master, std::uint64_t stream) {
  // splitmix64 over the combined key
  std::uint64_t z = master + 0x9E3779B97F4A7C15ULL * (stream + 1);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

Dataset Dataset::rows(std::span<const std::size_t> indices) const {
  Dataset out;
  out.features = gather_rows(features, indices);
  out.labels.reserve(indices.size());
  out.splits.reserve(indices.size());
  for (auto i : indices) {
    out.labels.push_back(labels.at(i));
    out.splits.push_back(splits.at(i));
  }
  out.num_classes = num_classes;
  out.standardization = standardization;
  return out;
}

std::vector<std::size_t> Dataset::indices_of(Split split) const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < splits.size(); ++i) {
    if (splits[i] == split) out.push_back(i);
  }
  return out;
}

Dataset Dataset::select(Split split) const {
  auto idx = indices_of(split);
  if (idx.empty()) throw ValueError("dataset has no rows in the requested split");
  return rows(idx);
}

void Dataset::validate() const {
  if (features.rank() != 2) throw DimensionError("dataset features must be a matrix");
  if (labels.size() != features.rows() || splits.size() != features.rows()) {
    throw DimensionError("dataset labels/splits do not match feature rows");
  }
  if (!features.all_finite()) throw ValueError("dataset contains non-finite features");
  for (int y : labels) {
    if (y < 0 || y >= num_classes) throw ValueError("label " + std::to_string(y) + " outside [0, K)");
  }
}

Dataset generate_gaussian_mixture(const MixtureParams& p) {
  if (p.num_classes < 2) throw ValueError("gaussian mixture needs K >= 2");
  if (p.dim < 2) throw ValueError("gaussian mixture needs d >= 2");
  if (p.train_per_class == 0) throw ValueError("gaussian mixture needs train samples");
  if (!(p.class_sep >= 0.0)) throw ValueError("class_sep must be non-negative");

  std::mt19937_64 rng(p.seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  const auto k = static_cast<std::size_t>(p.num_classes);

  std::vector<std::vector<double>> means(k, std::vector<double>(p.dim));
  for (auto& m : means) {
    double norm = 0.0;
    for (auto& v : m) {
      v = normal(rng);
      norm += v * v;
    }
    norm = std::sqrt(norm);
    for (auto& v : m) v = v / norm * p.class_sep;
  }

  const std::size_t per_class = p.train_per_class + p.heldout_per_class;
  const std::size_t n = k * per_class;
  Dataset ds;
  ds.num_classes = p.num_classes;
  ds.features = Tensor({n, p.dim});
  ds.labels.reserve(n);
  ds.splits.reserve(n);
  // Interleave classes so any prefix is roughly balanced.
  std::size_t row = 0;
  for (std::size_t s = 0; s < per_class; ++s) {
    for (std::size_t c = 0; c < k; ++c, ++row) {
      for (std::size_t j = 0; j < p.dim; ++j) ds.features(row, j) = means[c][j] + normal(rng);
      ds.labels.push_back(static_cast<int>(c));
      ds.splits.push_back(s < p.train_per_class ? Split::train : Split::heldout);
    }
  }

  auto train = ds.indices_of(Split::train);
  Standardization st{std::vector<double>(p.dim, 0.0), std::vector<double>(p.dim, 0.0)};
  for (auto i : train)
    for (std::size_t j = 0; j < p.dim; ++j) st.mean[j] += ds.features(i, j);
  for (auto& m : st.mean) m /= static_cast<double>(train.size());
  for (auto i : train) {
    for (std::size_t j = 0; j < p.dim; ++j) {
      const double d = ds.features(i, j) - st.mean[j];
      st.stddev[j] += d * d;
    }
  }
  for (auto& s : st.stddev) s = std::sqrt(s / static_cast<double>(train.size()));
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < p.dim; ++j) ds.features(i, j) = (ds.features(i, j) - st.mean[j]) / st.stddev[j];
  ds.standardization = std::move(st);
  return ds;
}

std::vector<std::size_t> sample_tiny_indices(const Dataset& dataset, std::size_t m, std::uint64_t seed) {
  auto train = dataset.indices_of(Split::train);
  if (m == 0 || m > train.size()) {
    throw ValueError("sample_tiny: requested " + std::to_string(m) + " rows from a train split of " +
                     std::to_string(train.size()));
  }
  std::mt19937_64 rng(seed);
  std::shuffle(train.begin(), train.end(), rng);
  train.resize(m);
  return train;
}

Dataset sample_tiny(const Dataset& dataset, std::size_t m, std::uint64_t seed) {
  auto idx = sample_tiny_indices(dataset, m, seed);
  return dataset.rows(idx);
}

std::pair<Dataset, Dataset> sample_tiny_disjoint(const Dataset& dataset, std::size_t m, std::uint64_t seed) {
  auto both = sample_tiny_indices(dataset, 2 * m, seed);
  std::span<const std::size_t> all(both);
  return {dataset.rows(all.first(m)), dataset.rows(all.subspan(m, m))};
}

namespace {

std::string format_double(double v) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

std::vector<std::string> split_line(const std::string& line) {
  std::vector<std::string> cells;
  std::string cell;
  std::istringstream in(line);
  while (std::getline(in, cell, ',')) cells.push_back(cell);
  if (!line.empty() && line.back() == ',') cells.emplace_back();
  return cells;
}

std::string trim(std::string s) {
  auto not_space = [](unsigned char c) { return !std::isspace(c); };
  s.erase(s.begin(), std::find_if(s.begin(), s.end(), not_space));
  s.erase(std::find_if(s.rbegin(), s.rend(), not_space).base(), s.end());
  return s;
}

}  // namespace

void write_csv(const Dataset& dataset, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  const std::size_t d = dataset.dim();
  for (std::size_t j = 0; j < d; ++j) out << 'f' << j << ',';
  out << "label,split\n";
  for (std::size_t i = 0; i < dataset.size(); ++i) {
    for (std::size_t j = 0; j < d; ++j) out << format_double(dataset.features(i, j)) << ',';
    out << dataset.labels[i] << ',' << (dataset.splits[i] == Split::train ? "train" : "heldout") << '\n';
  }
  if (!out) throw IoError("failed writing " + path.string());
}

Dataset read_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  std::string line;
  if (!std::getline(in, line)) throw ParseError(path.string() + ": empty file");
  if (!line.empty() && line.back() == '\r') line.pop_back();
  auto header = split_line(line);
  for (auto& h : header) h = trim(h);

  std::size_t d = 0;
  while (d < header.size() && header[d] == "f" + std::to_string(d)) ++d;
  if (d == 0) throw ParseError(path.string() + ":1: expected feature columns f0,f1,...");
  if (d >= header.size() || header[d] != "label") {
    throw ParseError(path.string() + ":1: missing column 'label' after f" + std::to_string(d - 1));
  }
  const bool has_split = header.size() > d + 1;
  if (has_split && (header.size() != d + 2 || header[d + 1] != "split")) {
    throw ParseError(path.string() + ":1: unexpected columns after 'label'");
  }

  std::vector<double> values;
  Dataset ds;
  std::size_t lineno = 1;
  int max_label = -1;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (trim(line).empty()) continue;
    auto cells = split_line(line);
    if (cells.size() != header.size()) {
      throw ParseError(path.string() + ":" + std::to_string(lineno) + ": expected " + std::to_string(header.size()) +
                       " cells, got " + std::to_string(cells.size()));
    }
    for (std::size_t j = 0; j < d; ++j) {
      std::string c = trim(cells[j]);
      double v = 0.0;
      auto res = std::from_chars(c.data(), c.data() + c.size(), v);
      if (res.ec != std::errc() || res.ptr != c.data() + c.size()) {
        throw ParseError(path.string() + ":" + std::to_string(lineno) + ": non-numeric cell '" + c + "' in column f" +
                         std::to_string(j));
      }
      values.push_back(v);
    }
    std::string lc = trim(cells[d]);
    int label = 0;
    auto res = std::from_chars(lc.data(), lc.data() + lc.size(), label);
    if (res.ec != std::errc() || res.ptr != lc.data() + lc.size() || label < 0) {
      throw ParseError(path.string() + ":" + std::to_string(lineno) + ": invalid label '" + lc + "'");
    }
    ds.labels.push_back(label);
    max_label = std::max(max_label, label);
    Split split = Split::train;
    if (has_split) {
      std::string sc = trim(cells[d + 1]);
      if (sc == "heldout") {
        split = Split::heldout;
      } else if (sc != "train") {
        throw ParseError(path.string() + ":" + std::to_string(lineno) + ": invalid split '" + sc + "'");
      }
    }
    ds.splits.push_back(split);
  }
  if (ds.labels.empty()) throw ParseError(path.string() + ": no data rows");
  ds.features = Tensor({ds.labels.size(), d}, std::move(values));
  ds.num_classes = max_label + 1;
  ds.standardization = {std::vector<double>(d, 0.0), std::vector<double>(d, 1.0)};
  return ds;
}

nlohmann::json dataset_manifest(const Dataset& dataset, const MixtureParams& params) {
  return {
      {"K", params.num_classes},
      {"d", params.dim},
      {"n", dataset.size()},
      {"n_train", dataset.indices_of(Split::train).size()},
      {"n_heldout", dataset.indices_of(Split::heldout).size()},
      {"seed", params.seed},
      {"class_sep", params.class_sep},
      {"standardization", {{"mean", dataset.standardization.mean}, {"stddev", dataset.standardization.stddev}}},
  };
}

MinibatchSampler::MinibatchSampler(std::size_t n, std::size_t batch, std::uint64_t seed)
    : n_(n), batch_(std::min(batch, n)), rng_(seed) {
  if (n == 0) throw ValueError("MinibatchSampler: empty dataset");
  if (batch == 0) throw ValueError("MinibatchSampler: batch must be positive");
  order_.resize(n);
  std::iota(order_.begin(), order_.end(), std::size_t{0});
  if (batch_ < n_) reshuffle();
}

void MinibatchSampler::reshuffle() {
  std::shuffle(order_.begin(), order_.end(), rng_);
  cursor_ = 0;
}

std::span<const std::size_t> MinibatchSampler::next() {
  if (batch_ == n_) return order_;
  if (cursor_ + batch_ > n_) reshuffle();
  std::span<const std::size_t> out(order_.data() + cursor_, batch_);
  cursor_ += batch_;
  return out;
}

}  // namespace practise
