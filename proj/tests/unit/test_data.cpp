#include "doctest.h"

#include <cmath>
#include <filesystem>
#include <fstream>
#include <set>

#include "practise/autodiff.hpp"
#include "practise/data.hpp"
#include "practise/errors.hpp"

using namespace practise;
namespace fs = std::filesystem;

namespace {

fs::path temp_file(const std::string& name) {
  fs::path dir = fs::temp_directory_path() / "practise_test_data";
  fs::create_directories(dir);
  return dir / name;
}

// Multinomial logistic regression trained full-batch on the train split;
// returns heldout accuracy.
double linear_teacher_accuracy(const Dataset& ds) {
  Dataset train = ds.select(Split::train), held = ds.select(Split::heldout);
  const std::size_t k = static_cast<std::size_t>(ds.num_classes);
  Tensor w({k, ds.dim()}, 0.0), b({k}, 0.0);
  for (int it = 0; it < 300; ++it) {
    ad::Graph g;
    ad::Var wv = g.parameter(w), bv = g.parameter(b);
    ad::Var z = ad::add_bias(ad::matmul_bt(g.constant(train.features), wv), bv);
    g.backward(ad::softmax_ce(z, train.labels, 1.0));
    std::vector<Tensor*> ps{&w, &b};
    std::vector<Tensor> gs{g.grad(wv), g.grad(bv)};
    sgd_step(ps, gs, 0.5);
  }
  Tensor z = add_row_vector(matmul_bt(held.features, w), b);
  std::size_t hit = 0;
  for (std::size_t i = 0; i < held.size(); ++i) {
    std::size_t best = 0;
    for (std::size_t j = 1; j < k; ++j)
      if (z(i, j) > z(i, best)) best = j;
    hit += static_cast<int>(best) == held.labels[i];
  }
  return static_cast<double>(hit) / held.size();
}

}  // namespace

TEST_CASE("mixture is deterministic and standardized on train") {
  MixtureParams p{4, 16, 100, 50, 3.0, 7};
  Dataset a = generate_gaussian_mixture(p), b = generate_gaussian_mixture(p);
  CHECK(a.features == b.features);
  CHECK(a.labels == b.labels);
  auto train = a.indices_of(Split::train);
  CHECK(train.size() == 400);
  for (std::size_t j = 0; j < a.dim(); ++j) {
    double m = 0, v = 0;
    for (auto i : train) m += a.features(i, j);
    m /= train.size();
    for (auto i : train) v += (a.features(i, j) - m) * (a.features(i, j) - m);
    CHECK(std::abs(m) < 1e-9);
    CHECK(std::abs(std::sqrt(v / train.size()) - 1.0) < 1e-9);
  }
  std::set<int> classes;
  for (auto i : train) classes.insert(a.labels[i]);
  CHECK(classes.size() == 4);
  p.seed = 8;
  CHECK(generate_gaussian_mixture(p).features != a.features);
  CHECK_THROWS_AS(generate_gaussian_mixture({1, 16, 10, 10, 1.0, 0}), ValueError);
  CHECK_THROWS_AS(generate_gaussian_mixture({4, 1, 10, 10, 1.0, 0}), ValueError);
}

TEST_CASE("separation controls linear accuracy") {
  double far = linear_teacher_accuracy(generate_gaussian_mixture({4, 16, 250, 250, 10.0, 1}));
  CHECK(far >= 0.99);
  double chance = linear_teacher_accuracy(generate_gaussian_mixture({4, 16, 250, 250, 0.0, 1}));
  double sigma = std::sqrt(0.25 * 0.75 / 1000.0);
  CHECK(std::abs(chance - 0.25) <= 3 * sigma);
}

TEST_CASE("tiny sets") {
  Dataset ds = generate_gaussian_mixture({4, 8, 250, 10, 2.0, 3});
  auto all = sample_tiny_indices(ds, 1000, 5);
  std::vector<std::size_t> sorted = all;
  std::sort(sorted.begin(), sorted.end());
  CHECK(sorted == ds.indices_of(Split::train));
  CHECK(sample_tiny_indices(ds, 50, 9) == sample_tiny_indices(ds, 50, 9));
  CHECK(sample_tiny(ds, 50, 9).features == sample_tiny(ds, 50, 9).features);
  CHECK_THROWS_AS(sample_tiny(ds, 1001, 1), ValueError);
  auto [a, b] = sample_tiny_disjoint(ds, 50, 4);
  CHECK(a.size() == 50);
  CHECK(b.size() == 50);
  auto pair = sample_tiny_indices(ds, 100, 4);
  std::set<std::size_t> first(pair.begin(), pair.begin() + 50), second(pair.begin() + 50, pair.end());
  for (auto i : first) CHECK(second.count(i) == 0);
  for (auto s : a.splits) CHECK(s == Split::train);
}

TEST_CASE("csv round trip is lossless") {
  Dataset ds = generate_gaussian_mixture({3, 5, 20, 10, 2.0, 12});
  auto path = temp_file("roundtrip.csv");
  write_csv(ds, path);
  Dataset back = read_csv(path);
  CHECK(back.features == ds.features);
  CHECK(back.labels == ds.labels);
  CHECK(back.splits == ds.splits);
  CHECK(back.num_classes == 3);
}

TEST_CASE("csv parsing and errors") {
  auto path = temp_file("hand.csv");
  {
    std::ofstream(path) << "f0,f1,label\n0.5,1.0,0\n-2,3e-1,1\n7,8,0\n";
  }
  Dataset ds = read_csv(path);
  CHECK(ds.features.shape() == Shape{3, 2});
  CHECK(ds.labels == std::vector<int>{0, 1, 0});
  CHECK(ds.features(1, 1) == 0.3);

  {
    std::ofstream(path) << "f0,f1\n0.5,1.0\n";
  }
  try {
    read_csv(path);
    FAIL("expected ParseError");
  } catch (const ParseError& e) {
    CHECK(std::string(e.what()).find("'label'") != std::string::npos);
  }
  {
    std::ofstream(path) << "f0,f1,label\n0.5,1.0,0\n1,2\n";
  }
  try {
    read_csv(path);
    FAIL("expected ParseError");
  } catch (const ParseError& e) {
    CHECK(std::string(e.what()).find(":3:") != std::string::npos);
  }
  {
    std::ofstream(path) << "f0,f1,label\n0.5,abc,0\n";
  }
  CHECK_THROWS_AS(read_csv(path), ParseError);
  CHECK_THROWS_AS(read_csv(temp_file("does_not_exist.csv")), IoError);
}

TEST_CASE("minibatch sampler covers each epoch") {
  MinibatchSampler s(10, 4, 1);
  std::multiset<std::size_t> seen;
  for (int i = 0; i < 2; ++i)
    for (auto v : s.next()) seen.insert(v);
  CHECK(seen.size() == 8);
  CHECK(MinibatchSampler(3, 64, 0).batch_size() == 3);
  MinibatchSampler a(20, 5, 9), b(20, 5, 9);
  for (int i = 0; i < 7; ++i) {
    auto x = a.next(), y = b.next();
    CHECK(std::vector<std::size_t>(x.begin(), x.end()) == std::vector<std::size_t>(y.begin(), y.end()));
  }
  CHECK(derive_seed(1, 0) != derive_seed(1, 1));
  CHECK(derive_seed(1, 0) == derive_seed(1, 0));
}
