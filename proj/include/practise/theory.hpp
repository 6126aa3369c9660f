#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "json.hpp"

namespace practise::theory {

// Joint table p(y, f) over a |Y| x |F| grid for one fixed conditioning input.
struct DiscreteJoint {
  std::size_t ny = 0;
  std::size_t nf = 0;
  std::vector<double> p;  // row-major, p[y * nf + f]

  double operator()(std::size_t y, std::size_t f) const { return p[y * nf + f]; }
  void validate() const;
};

inline constexpr double kMinSupport = 1e-9;

// Full-support random joint; draws that put any cell below kMinSupport are redrawn.
DiscreteJoint random_joint(std::size_t ny, std::size_t nf, std::mt19937_64& rng);
// q(y, f) = p(y) q(f)
DiscreteJoint product_joint(const std::vector<double>& py, const std::vector<double>& qf);

std::vector<double> marginal_y(const DiscreteJoint& j);
std::vector<double> marginal_f(const DiscreteJoint& j);
double kl(const std::vector<double>& p, const std::vector<double>& q);
double kl(const DiscreteJoint& p, const DiscreteJoint& q);

struct Claim1Result {
  std::size_t trials = 0;
  std::size_t violations = 0;
  double min_margin = 0.0;  // min over trials of KL_joint - KL_marginal
  bool pass = false;
};
// KL[p(y) || q(y)] <= KL[p(y,f) || q(y,f)] on random joint pairs.
double claim1_margin(const DiscreteJoint& p, const DiscreteJoint& q);
Claim1Result verify_claim1(std::size_t trials, std::size_t ny, std::size_t nf, std::uint64_t seed);

struct Claim2Terms {
  double joint_kl = 0.0;
  double mimic = 0.0;           // E_{p(f)}[-ln q(f)]
  double classification = 0.0;  // E_{p(f)} KL[p(y|f) || q(y|f)]
  double constant = 0.0;        // E_{p(f)}[ln p(f)]
  double error() const;
};
Claim2Terms claim2_terms(const DiscreteJoint& p, const DiscreteJoint& q);

struct Claim2Result {
  std::size_t trials = 0;
  double max_error = 0.0;
  bool pass = false;
};
Claim2Result verify_claim2(std::size_t trials, std::size_t ny, std::size_t nf, std::uint64_t seed);

// -ln N(f; mu, 1 / (2 beta)) - beta (f - mu)^2, which should not depend on (f, mu).
double gaussian_residual(double f, double mu, double beta);
struct GaussianMseResult {
  std::size_t trials = 0;
  double constant = 0.0;
  double max_error = 0.0;  // max |residual - mean residual|
  bool pass = false;
};
GaussianMseResult verify_gaussian_mse(double beta, std::size_t trials, std::uint64_t seed);

struct Distribution {
  enum class Kind { normal, uniform } kind = Kind::normal;
  double a = 0.0;  // mean, or lower bound
  double b = 1.0;  // stddev, or upper bound

  double sample(std::mt19937_64& rng) const;
  double mean() const;
  double second_moment() const;  // E[x^2]
  void validate() const;
};
Distribution distribution_from_string(const std::string& s);  // "normal:0,1" or "uniform:-1,1"
std::string to_string(const Distribution& d);

struct VarianceReport {
  std::string claim;
  std::size_t n = 0;
  std::size_t trials = 0;
  std::size_t excluded = 0;  // non-converged trials left out of the statistics
  std::vector<std::string> names;
  std::vector<double> truth;
  std::vector<double> mean_estimate;
  std::vector<double> empirical_var;
  std::vector<double> predicted_var;
  std::vector<double> ratio;

  double total_empirical() const;
  bool pass = false;
};
nlohmann::json to_json(const VarianceReport& r);

struct LinearTeacher {
  double w = 1.5;
  double b = 0.5;
};

// Feature mimicking with an L2 loss is least squares under Gaussian noise of
// variance 1/(2 beta); fits are closed-form OLS. pass: both ratios in [0.85, 1.15].
VarianceReport verify_claim4(std::size_t n, double beta, std::size_t trials, const Distribution& x_dist,
                             std::uint64_t seed, LinearTeacher teacher = {});

// Scalar-feature softmax head: logit_j = w_j f + b_j. The last class is pinned
// to its true value to remove the shift gauge.
struct SoftmaxTeacher {
  std::vector<double> w;
  std::vector<double> b;
  std::size_t classes() const { return w.size(); }
  void validate() const;
};

// E_f[q_i (1 - q_i)] for the teacher at temperature T, by quadrature over f.
std::vector<double> softmax_sensitivity(const SoftmaxTeacher& teacher, double temperature, const Distribution& f_dist);

struct SoftmaxFit {
  std::vector<double> w;
  std::vector<double> b;
  bool converged = false;
  std::size_t iterations = 0;
  double grad_norm = 0.0;
};
// Minimizes mean cross-entropy over the free (w, b) by damped Newton descent
// until the gradient norm drops below tol. Class C-1 stays at (w_pin, b_pin).
SoftmaxFit fit_softmax(const std::vector<double>& f, const std::vector<int>& y, std::size_t classes, double w_pin,
                       double b_pin, double tol = 1e-8, std::size_t max_iters = 100);

// Labels drawn from softmax(logits / T); estimated parameters are the
// tempered ones (w / T, b / T). Draws are common across T and n prefixes for
// the same seed. Reported coordinates: w_0..w_{C-2}, b_0..b_{C-2}.
VarianceReport verify_claim5(std::size_t n, double temperature, std::size_t trials, const SoftmaxTeacher& teacher,
                             const Distribution& f_dist, std::uint64_t seed);

struct ScalingResult {
  std::vector<std::size_t> ns;
  std::vector<VarianceReport> reports;
  double worst_deviation = 0.0;  // max over pairs and coordinates |n1 v1 / (n2 v2) - 1|
  bool pass = false;             // worst_deviation <= 0.2
};
ScalingResult claim5_scaling(const std::vector<std::size_t>& ns, std::size_t trials, const SoftmaxTeacher& teacher,
                             const Distribution& f_dist, std::uint64_t seed);

struct TemperatureResult {
  std::vector<double> temperatures;
  std::vector<double> total_variance;  // sum of per-coordinate empirical variances
  std::vector<VarianceReport> reports;
  bool pass = false;  // strictly decreasing in T
};
TemperatureResult claim5_temperature(std::size_t n, const std::vector<double>& temperatures, std::size_t trials,
                                     const SoftmaxTeacher& teacher, const Distribution& f_dist, std::uint64_t seed);

struct StabilityReport {
  std::size_t n = 0;
  double beta = 0.0;
  double confidence = 0.0;
  double epsilon = 0.0;
  double threshold = 0.0;  // feature mimicking predicted stabler when epsilon < threshold
  bool predicted_fm_stabler = false;
  VarianceReport feature_mimic;
  VarianceReport classification;
  std::vector<double> variance_ratio;  // classification / feature mimic, per coordinate (w, b)
  bool empirical_fm_stabler = false;
  bool pass = false;  // empirical ordering agrees with the prediction
};
nlohmann::json to_json(const StabilityReport& r);

// Same scalar input distribution N(0,1) for both estimators. The classifier
// is a two-class teacher with w = 0 and p(class 0) = confidence everywhere.
StabilityReport compare_stability(std::size_t n, double beta, double confidence, std::size_t trials,
                                  std::uint64_t seed);

}  // namespace practise::theory
