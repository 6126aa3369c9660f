#include "doctest.h"

#include <cmath>
#include <numbers>
#include <random>

#include "practise/errors.hpp"
#include "practise/theory.hpp"

using namespace practise;
using namespace practise::theory;

namespace {

// Direct summation of the decomposition terms from conditionals.
Claim2Terms oracle_terms(const DiscreteJoint& p, const DiscreteJoint& q) {
  Claim2Terms t;
  for (std::size_t f = 0; f < p.nf; ++f) {
    double pf = 0, qf = 0;
    for (std::size_t y = 0; y < p.ny; ++y) {
      pf += p(y, f);
      qf += q(y, f);
    }
    t.mimic += pf * -std::log(qf);
    t.constant += pf * std::log(pf);
    double k = 0;
    for (std::size_t y = 0; y < p.ny; ++y) k += (p(y, f) / pf) * std::log((p(y, f) / pf) / (q(y, f) / qf));
    t.classification += pf * k;
    for (std::size_t y = 0; y < p.ny; ++y) t.joint_kl += p(y, f) * std::log(p(y, f) / q(y, f));
  }
  return t;
}

}  // namespace

TEST_CASE("random joints have full support and sum to one") {
  std::mt19937_64 rng(1);
  for (int i = 0; i < 50; ++i) {
    auto j = random_joint(3, 4, rng);
    CHECK_NOTHROW(j.validate());
  }
  DiscreteJoint bad{2, 2, {0.5, 0.5, 0.0, 0.0}};
  CHECK_THROWS_AS(bad.validate(), ValueError);
}

TEST_CASE("claim 1 examples") {
  std::mt19937_64 rng(2);
  auto p = random_joint(4, 4, rng);
  CHECK(kl(p, p) == 0.0);
  CHECK(claim1_margin(p, p) == 0.0);
  std::vector<double> qf{0.1, 0.2, 0.3, 0.4};
  auto q = product_joint(marginal_y(p), qf);
  CHECK(std::abs(kl(marginal_y(p), marginal_y(q))) < 1e-15);
  CHECK(kl(p, q) > 0.0);
  auto r = verify_claim1(1000, 4, 4, 3);
  CHECK(r.violations == 0);
  CHECK(r.pass);
  CHECK(r.min_margin >= -1e-12);
}

TEST_CASE("claim 2 terms match a conditional summation oracle") {
  std::mt19937_64 rng(4);
  for (int i = 0; i < 100; ++i) {
    auto p = random_joint(3, 5, rng), q = random_joint(3, 5, rng);
    auto t = claim2_terms(p, q), o = oracle_terms(p, q);
    CHECK(t.joint_kl == doctest::Approx(o.joint_kl).epsilon(1e-12));
    CHECK(t.mimic == doctest::Approx(o.mimic).epsilon(1e-12));
    CHECK(t.classification == doctest::Approx(o.classification).epsilon(1e-12));
    CHECK(t.constant == doctest::Approx(o.constant).epsilon(1e-12));
    CHECK(std::abs(o.joint_kl - (o.mimic + o.classification + o.constant)) < 1e-10);
  }
  CHECK(verify_claim2(1000, 3, 5, 5).max_error < 1e-10);
}

TEST_CASE("claim 2 special cases") {
  std::mt19937_64 rng(6);
  // Same f-marginal: the mimicking term cancels against the constant.
  auto p = random_joint(3, 4, rng);
  auto pf = marginal_f(p);
  DiscreteJoint q{3, 4, std::vector<double>(12)};
  auto cond = random_joint(3, 4, rng);
  auto cf = marginal_f(cond);
  for (std::size_t y = 0; y < 3; ++y)
    for (std::size_t f = 0; f < 4; ++f) q.p[y * 4 + f] = cond(y, f) / cf[f] * pf[f];
  auto t = claim2_terms(p, q);
  CHECK(std::abs(t.mimic + t.constant) < 1e-12);
  CHECK(t.error() < 1e-12);
  // y independent of f under both: conditionals equal the y-marginals.
  std::vector<double> py{0.2, 0.8}, qy{0.5, 0.5}, f1{0.3, 0.7}, f2{0.6, 0.4};
  auto pi = product_joint(py, f1), qi = product_joint(qy, f2);
  CHECK(claim2_terms(pi, qi).classification == doctest::Approx(kl(py, qy)).epsilon(1e-12));
  auto pj = product_joint(py, f1), qj = product_joint(py, f2);
  CHECK(std::abs(claim2_terms(pj, qj).classification) < 1e-15);
}

TEST_CASE("gaussian negative log density is beta (f - mu)^2 plus a constant") {
  const double beta = 0.5;
  const double c = gaussian_residual(1.0, 1.0, beta);
  CHECK(c == doctest::Approx(0.5 * std::log(std::numbers::pi / beta)).epsilon(1e-14));
  // quadratic part at f - mu = 2 is 2.0
  const double full = gaussian_residual(3.0, 1.0, beta) + beta * 4.0;
  CHECK(full - c == doctest::Approx(2.0).epsilon(1e-12));
  auto r = verify_gaussian_mse(beta, 2000, 1);
  CHECK(r.max_error < 1e-12);
  CHECK(r.pass);
}

TEST_CASE("distributions") {
  auto n = distribution_from_string("normal:0,2");
  CHECK(n.second_moment() == doctest::Approx(4.0));
  auto u = distribution_from_string("uniform:-1,1");
  CHECK(u.mean() == doctest::Approx(0.0));
  CHECK(u.second_moment() == doctest::Approx(1.0 / 3.0));
  CHECK(to_string(distribution_from_string(to_string(u))) == to_string(u));
  CHECK_THROWS(distribution_from_string("cauchy:0,1"));
  CHECK_THROWS(distribution_from_string("normal:0,-1"));
}

TEST_CASE("claim 4 variance law") {
  Distribution x{Distribution::Kind::normal, 0.0, 1.0};
  auto r = verify_claim4(100, 0.5, 2000, x, 7);
  REQUIRE(r.predicted_var.size() == 2);
  CHECK(r.predicted_var[0] == doctest::Approx(0.01));
  CHECK(r.predicted_var[1] == doctest::Approx(0.01));
  CHECK(r.ratio[0] >= 0.85);
  CHECK(r.ratio[0] <= 1.15);
  CHECK(r.pass);
  for (std::size_t i = 0; i < 2; ++i) {
    double se = std::sqrt(r.empirical_var[i] / r.trials);
    CHECK(std::abs(r.mean_estimate[i] - r.truth[i]) < 3 * se);
  }
  auto twice = verify_claim4(200, 0.5, 2000, x, 8);
  CHECK(std::abs(r.empirical_var[0] / twice.empirical_var[0] / 2.0 - 1.0) < 0.15);
  CHECK_THROWS(verify_claim4(5, 0.5, 2000, x, 1));
  CHECK_THROWS(verify_claim4(100, 0.5, 100, x, 1));
}

TEST_CASE("softmax fit recovers a generating head") {
  std::mt19937_64 rng(3);
  std::normal_distribution<double> nf(0.0, 1.0);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::vector<double> f;
  std::vector<int> y;
  for (int i = 0; i < 20000; ++i) {
    double v = nf(rng);
    double p0 = 1.0 / (1.0 + std::exp(-(1.0 * v + 0.5)));
    f.push_back(v);
    y.push_back(u(rng) < p0 ? 0 : 1);
  }
  auto fit = fit_softmax(f, y, 2, 0.0, 0.0);
  CHECK(fit.converged);
  CHECK(fit.grad_norm < 1e-8);
  CHECK(fit.w[0] == doctest::Approx(1.0).epsilon(0.05));
  CHECK(fit.b[0] == doctest::Approx(0.5).epsilon(0.06));
}

TEST_CASE("claim 5 on a symmetric two-class teacher") {
  SoftmaxTeacher t{{0.0, 0.0}, {0.0, 0.0}};
  Distribution f{Distribution::Kind::normal, 0.0, 1.0};
  auto eps = softmax_sensitivity(t, 1.0, f);
  CHECK(eps[0] == doctest::Approx(0.25).epsilon(1e-9));
  auto r = verify_claim5(200, 1.0, 1000, t, f, 9);
  CHECK(r.predicted_var[1] == doctest::Approx(1.0 / (0.25 * 200)));
  CHECK(r.ratio[1] >= 0.7);
  CHECK(r.ratio[1] <= 1.4);
  CHECK(verify_claim5(200, 1.0, 1000, t, f, 9).empirical_var == r.empirical_var);
}

TEST_CASE("claim 5 scaling and temperature") {
  Distribution f{Distribution::Kind::normal, 0.0, 1.0};
  SoftmaxTeacher soft{{0.5, -0.5, 0.0}, {0.2, 0.1, 0.0}};
  auto s = claim5_scaling({100, 400}, 600, soft, f, 2);
  CHECK(s.worst_deviation <= 0.2);
  CHECK(s.pass);
  SoftmaxTeacher confident{{3.0, -3.0, 0.0}, {1.0, 1.0, 0.0}};
  auto t = claim5_temperature(200, {1.0, 5.0}, 600, confident, f, 3);
  CHECK(t.total_variance[1] < t.total_variance[0]);
  CHECK(t.pass);
}

TEST_CASE("stability ordering") {
  auto sharp = compare_stability(1000, 0.5, 0.999, 500, 1);
  CHECK(sharp.epsilon < 1e-2);
  CHECK(sharp.predicted_fm_stabler);
  CHECK(sharp.empirical_fm_stabler);
  CHECK(sharp.pass);
  auto soft = compare_stability(200, 0.02, 0.5, 500, 2);
  CHECK_FALSE(soft.predicted_fm_stabler);
  CHECK_FALSE(soft.empirical_fm_stabler);
  CHECK(soft.pass);
  auto j = to_json(sharp);
  CHECK(j.contains("threshold"));
}
