#include "practise/theory.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <charconv>
#include <cmath>
#include <limits>
#include <numbers>

#include "practise/data.hpp"
#include "practise/errors.hpp"

namespace practise::theory {

void DiscreteJoint::validate() const {
  if (ny == 0 || nf == 0 || p.size() != ny * nf) throw DimensionError("DiscreteJoint: table size mismatch");
  double total = 0.0;
  for (double v : p) {
    if (!(v >= kMinSupport)) throw ValueError("DiscreteJoint: entries must be >= 1e-9 (full support)");
    total += v;
  }
  if (std::abs(total - 1.0) > 1e-12) throw ValueError("DiscreteJoint: table does not sum to 1");
}

DiscreteJoint random_joint(std::size_t ny, std::size_t nf, std::mt19937_64& rng) {
  if (ny == 0 || nf == 0) throw DimensionError("random_joint: empty grid");
  std::exponential_distribution<double> expo(1.0);
  DiscreteJoint j{ny, nf, std::vector<double>(ny * nf)};
  for (;;) {
    double total = 0.0;
    for (auto& v : j.p) total += (v = expo(rng));
    for (auto& v : j.p) v /= total;
    if (*std::min_element(j.p.begin(), j.p.end()) >= kMinSupport) return j;
  }
}

DiscreteJoint product_joint(const std::vector<double>& py, const std::vector<double>& qf) {
  DiscreteJoint j{py.size(), qf.size(), std::vector<double>(py.size() * qf.size())};
  for (std::size_t y = 0; y < py.size(); ++y)
    for (std::size_t f = 0; f < qf.size(); ++f) j.p[y * qf.size() + f] = py[y] * qf[f];
  return j;
}

std::vector<double> marginal_y(const DiscreteJoint& j) {
  std::vector<double> m(j.ny, 0.0);
  for (std::size_t y = 0; y < j.ny; ++y)
    for (std::size_t f = 0; f < j.nf; ++f) m[y] += j(y, f);
  return m;
}

std::vector<double> marginal_f(const DiscreteJoint& j) {
  std::vector<double> m(j.nf, 0.0);
  for (std::size_t y = 0; y < j.ny; ++y)
    for (std::size_t f = 0; f < j.nf; ++f) m[f] += j(y, f);
  return m;
}

double kl(const std::vector<double>& p, const std::vector<double>& q) {
  if (p.size() != q.size()) throw DimensionError("kl: size mismatch");
  double s = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    if (p[i] > 0.0) s += p[i] * std::log(p[i] / q[i]);
  }
  return s;
}

double kl(const DiscreteJoint& p, const DiscreteJoint& q) {
  if (p.ny != q.ny || p.nf != q.nf) throw DimensionError("kl: grid mismatch");
  return kl(p.p, q.p);
}

double claim1_margin(const DiscreteJoint& p, const DiscreteJoint& q) {
  return kl(p, q) - kl(marginal_y(p), marginal_y(q));
}

Claim1Result verify_claim1(std::size_t trials, std::size_t ny, std::size_t nf, std::uint64_t seed) {
  Claim1Result r;
  r.trials = trials;
  r.min_margin = std::numeric_limits<double>::infinity();
  for (std::size_t t = 0; t < trials; ++t) {
    std::mt19937_64 rng(derive_seed(seed, t));
    DiscreteJoint p = random_joint(ny, nf, rng);
    DiscreteJoint q = random_joint(ny, nf, rng);
    const double m = claim1_margin(p, q);
    r.min_margin = std::min(r.min_margin, m);
    if (m < -1e-12) ++r.violations;
  }
  r.pass = r.violations == 0;
  return r;
}

double Claim2Terms::error() const { return std::abs(joint_kl - (mimic + classification + constant)); }

Claim2Terms claim2_terms(const DiscreteJoint& p, const DiscreteJoint& q) {
  if (p.ny != q.ny || p.nf != q.nf) throw DimensionError("claim2: grid mismatch");
  Claim2Terms t;
  t.joint_kl = kl(p, q);
  const auto pf = marginal_f(p);
  const auto qf = marginal_f(q);
  for (std::size_t f = 0; f < p.nf; ++f) {
    t.mimic += pf[f] * -std::log(qf[f]);
    t.constant += pf[f] * std::log(pf[f]);
    double cond = 0.0;
    for (std::size_t y = 0; y < p.ny; ++y) {
      const double py = p(y, f) / pf[f];
      const double qy = q(y, f) / qf[f];
      cond += py * std::log(py / qy);
    }
    t.classification += pf[f] * cond;
  }
  return t;
}

Claim2Result verify_claim2(std::size_t trials, std::size_t ny, std::size_t nf, std::uint64_t seed) {
  Claim2Result r;
  r.trials = trials;
  for (std::size_t t = 0; t < trials; ++t) {
    std::mt19937_64 rng(derive_seed(seed, t));
    DiscreteJoint p = random_joint(ny, nf, rng);
    DiscreteJoint q = random_joint(ny, nf, rng);
    r.max_error = std::max(r.max_error, claim2_terms(p, q).error());
  }
  r.pass = r.max_error < 1e-10;
  return r;
}

double gaussian_residual(double f, double mu, double beta) {
  if (!(beta > 0.0)) throw ValueError("gaussian_residual: beta must be positive");
  const double sigma = 1.0 / std::sqrt(2.0 * beta);
  const double z = (f - mu) / sigma;
  const double neg_log = 0.5 * z * z + std::log(sigma) + 0.5 * std::log(2.0 * std::numbers::pi);
  return neg_log - beta * (f - mu) * (f - mu);
}

GaussianMseResult verify_gaussian_mse(double beta, std::size_t trials, std::uint64_t seed) {
  if (!(beta > 0.0)) throw ValueError("verify_gaussian_mse: beta must be positive");
  if (trials == 0) throw ValueError("verify_gaussian_mse: trials must be >= 1");
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(-5.0, 5.0);
  std::vector<double> res(trials);
  for (auto& v : res) {
    const double f = u(rng);
    const double mu = u(rng);
    v = gaussian_residual(f, mu, beta);
  }
  GaussianMseResult r;
  r.trials = trials;
  for (double v : res) r.constant += v;
  r.constant /= static_cast<double>(trials);
  for (double v : res) r.max_error = std::max(r.max_error, std::abs(v - r.constant));
  r.pass = r.max_error < 1e-12;
  return r;
}

double Distribution::sample(std::mt19937_64& rng) const {
  if (kind == Kind::normal) return std::normal_distribution<double>(a, b)(rng);
  return std::uniform_real_distribution<double>(a, b)(rng);
}

double Distribution::mean() const { return kind == Kind::normal ? a : 0.5 * (a + b); }

double Distribution::second_moment() const {
  if (kind == Kind::normal) return a * a + b * b;
  return (a * a + a * b + b * b) / 3.0;
}

void Distribution::validate() const {
  if (kind == Kind::normal && !(b > 0.0)) throw ValueError("normal distribution needs a positive stddev");
  if (kind == Kind::uniform && !(b > a)) throw ValueError("uniform distribution needs lower < upper");
}

Distribution distribution_from_string(const std::string& s) {
  const auto colon = s.find(':');
  const auto comma = s.find(',', colon == std::string::npos ? 0 : colon);
  if (colon == std::string::npos || comma == std::string::npos) {
    throw ValueError("distribution must look like normal:MEAN,STD or uniform:LO,HI, got '" + s + "'");
  }
  Distribution d;
  const std::string kind = s.substr(0, colon);
  if (kind == "normal") {
    d.kind = Distribution::Kind::normal;
  } else if (kind == "uniform") {
    d.kind = Distribution::Kind::uniform;
  } else {
    throw ValueError("unknown distribution '" + kind + "'");
  }
  auto parse = [&](std::size_t from, std::size_t to) {
    double v = 0.0;
    auto r = std::from_chars(s.data() + from, s.data() + to, v);
    if (r.ec != std::errc() || r.ptr != s.data() + to) throw ValueError("bad number in distribution '" + s + "'");
    return v;
  };
  d.a = parse(colon + 1, comma);
  d.b = parse(comma + 1, s.size());
  d.validate();
  return d;
}

std::string to_string(const Distribution& d) {
  return (d.kind == Distribution::Kind::normal ? "normal:" : "uniform:") + std::to_string(d.a) + "," +
         std::to_string(d.b);
}

double VarianceReport::total_empirical() const {
  double s = 0.0;
  for (double v : empirical_var) s += v;
  return s;
}

nlohmann::json to_json(const VarianceReport& r) {
  return {{"claim", r.claim},          {"n", r.n},
          {"trials", r.trials},        {"excluded", r.excluded},
          {"parameters", r.names},     {"truth", r.truth},
          {"mean_estimate", r.mean_estimate}, {"predicted", r.predicted_var},
          {"empirical", r.empirical_var},     {"ratio", r.ratio},
          {"pass", r.pass}};
}

namespace {

// Sample means and (n-1) variances of the rows of `estimates`.
void summarize(const std::vector<std::vector<double>>& estimates, VarianceReport& r) {
  const std::size_t k = r.names.size();
  const double m = static_cast<double>(estimates.size());
  r.mean_estimate.assign(k, 0.0);
  r.empirical_var.assign(k, 0.0);
  if (estimates.size() < 2) {
    r.empirical_var.assign(k, std::numeric_limits<double>::quiet_NaN());
    return;
  }
  for (const auto& e : estimates)
    for (std::size_t i = 0; i < k; ++i) r.mean_estimate[i] += e[i];
  for (auto& v : r.mean_estimate) v /= m;
  for (const auto& e : estimates)
    for (std::size_t i = 0; i < k; ++i) r.empirical_var[i] += (e[i] - r.mean_estimate[i]) * (e[i] - r.mean_estimate[i]);
  for (auto& v : r.empirical_var) v /= m - 1.0;
  r.ratio.resize(k);
  for (std::size_t i = 0; i < k; ++i) r.ratio[i] = r.empirical_var[i] / r.predicted_var[i];
}

bool ratios_within(const VarianceReport& r, double lo, double hi) {
  if (r.ratio.empty()) return false;
  return std::all_of(r.ratio.begin(), r.ratio.end(), [&](double v) { return v >= lo && v <= hi; });
}

}  // namespace

VarianceReport verify_claim4(std::size_t n, double beta, std::size_t trials, const Distribution& x_dist,
                             std::uint64_t seed, LinearTeacher teacher) {
  if (n < 10) throw ValueError("verify_claim4: n must be >= 10");
  if (trials < 500) throw ValueError("verify_claim4: trials must be >= 500");
  if (!(beta > 0.0)) throw ValueError("verify_claim4: beta must be positive");
  x_dist.validate();
  const double ex2 = x_dist.second_moment();
  VarianceReport r;
  r.claim = "claim4";
  r.n = n;
  r.trials = trials;
  r.names = {"w", "b"};
  r.truth = {teacher.w, teacher.b};
  r.predicted_var = {1.0 / (2.0 * n * beta * ex2), 1.0 / (2.0 * n * beta)};

  std::normal_distribution<double> noise(0.0, 1.0 / std::sqrt(2.0 * beta));
  std::vector<std::vector<double>> est;
  est.reserve(trials);
  std::vector<double> x(n), f(n);
  for (std::size_t t = 0; t < trials; ++t) {
    std::mt19937_64 rng(derive_seed(seed, t));
    for (;;) {
      for (std::size_t i = 0; i < n; ++i) {
        x[i] = x_dist.sample(rng);
        f[i] = teacher.w * x[i] + teacher.b + noise(rng);
      }
      double sx = 0, sf = 0, sxx = 0, sxf = 0;
      for (std::size_t i = 0; i < n; ++i) {
        sx += x[i];
        sf += f[i];
        sxx += x[i] * x[i];
        sxf += x[i] * f[i];
      }
      const double det = n * sxx - sx * sx;
      if (std::abs(det) < 1e-12 * n * n) continue;  // singular design, resample
      const double w = (n * sxf - sx * sf) / det;
      est.push_back({w, (sf - w * sx) / n});
      break;
    }
  }
  summarize(est, r);
  r.pass = ratios_within(r, 0.85, 1.15);
  return r;
}

void SoftmaxTeacher::validate() const {
  if (w.size() < 2 || w.size() != b.size()) throw ValueError("SoftmaxTeacher: need >= 2 classes with matching w, b");
}

namespace {

void softmax_into(const std::vector<double>& z, std::vector<double>& q) {
  const double m = *std::max_element(z.begin(), z.end());
  double s = 0.0;
  q.resize(z.size());
  for (std::size_t j = 0; j < z.size(); ++j) s += (q[j] = std::exp(z[j] - m));
  for (auto& v : q) v /= s;
}

}  // namespace

std::vector<double> softmax_sensitivity(const SoftmaxTeacher& teacher, double temperature,
                                        const Distribution& f_dist) {
  teacher.validate();
  f_dist.validate();
  if (!(temperature > 0.0)) throw ValueError("softmax_sensitivity: temperature must be positive");
  const std::size_t c = teacher.classes();
  double lo, hi;
  if (f_dist.kind == Distribution::Kind::normal) {
    lo = f_dist.a - 10.0 * f_dist.b;
    hi = f_dist.a + 10.0 * f_dist.b;
  } else {
    lo = f_dist.a;
    hi = f_dist.b;
  }
  // Composite Simpson on a fine grid.
  const std::size_t steps = 20000;
  const double h = (hi - lo) / steps;
  std::vector<double> eps(c, 0.0), z(c), q;
  double mass = 0.0;
  for (std::size_t k = 0; k <= steps; ++k) {
    const double f = lo + h * k;
    double dens = 1.0;
    if (f_dist.kind == Distribution::Kind::normal) {
      const double u = (f - f_dist.a) / f_dist.b;
      dens = std::exp(-0.5 * u * u);
    }
    const double wgt = (k == 0 || k == steps) ? 1.0 : (k % 2 ? 4.0 : 2.0);
    for (std::size_t j = 0; j < c; ++j) z[j] = (teacher.w[j] * f + teacher.b[j]) / temperature;
    softmax_into(z, q);
    for (std::size_t j = 0; j < c; ++j) eps[j] += wgt * dens * q[j] * (1.0 - q[j]);
    mass += wgt * dens;
  }
  for (auto& e : eps) e /= mass;
  return eps;
}

SoftmaxFit fit_softmax(const std::vector<double>& f, const std::vector<int>& y, std::size_t classes, double w_pin,
                       double b_pin, double tol, std::size_t max_iters) {
  if (classes < 2) throw ValueError("fit_softmax: need >= 2 classes");
  if (f.size() != y.size() || f.empty()) throw DimensionError("fit_softmax: f and y must be non-empty and aligned");
  const std::size_t free = classes - 1;
  const std::size_t dim = 2 * free;  // w_0..w_{C-2}, b_0..b_{C-2}
  const double n = static_cast<double>(f.size());
  Eigen::VectorXd theta = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(dim));
  std::vector<double> z(classes), q;

  auto objective = [&](const Eigen::VectorXd& th, Eigen::VectorXd* grad, Eigen::MatrixXd* hess) {
    double loss = 0.0;
    if (grad) grad->setZero(static_cast<Eigen::Index>(dim));
    if (hess) hess->setZero(static_cast<Eigen::Index>(dim), static_cast<Eigen::Index>(dim));
    for (std::size_t i = 0; i < f.size(); ++i) {
      for (std::size_t j = 0; j < free; ++j) z[j] = th[j] * f[i] + th[free + j];
      z[free] = w_pin * f[i] + b_pin;
      const double m = *std::max_element(z.begin(), z.end());
      double s = 0.0;
      for (double v : z) s += std::exp(v - m);
      loss += m + std::log(s) - z[static_cast<std::size_t>(y[i])];
      if (!grad) continue;
      softmax_into(z, q);
      const double fi = f[i];
      for (std::size_t j = 0; j < free; ++j) {
        const double r = q[j] - (y[i] == static_cast<int>(j) ? 1.0 : 0.0);
        (*grad)[j] += r * fi;
        (*grad)[free + j] += r;
        if (!hess) continue;
        for (std::size_t k = 0; k < free; ++k) {
          const double c = (j == k ? q[j] : 0.0) - q[j] * q[k];
          (*hess)(j, k) += c * fi * fi;
          (*hess)(j, free + k) += c * fi;
          (*hess)(free + j, k) += c * fi;
          (*hess)(free + j, free + k) += c;
        }
      }
    }
    if (grad) *grad /= n;
    if (hess) *hess /= n;
    return loss / n;
  };

  SoftmaxFit fit;
  Eigen::VectorXd g;
  Eigen::MatrixXd h;
  double loss = objective(theta, &g, &h);
  for (std::size_t it = 0; it < max_iters; ++it) {
    fit.grad_norm = g.norm();
    if (fit.grad_norm < tol) {
      fit.converged = true;
      break;
    }
    Eigen::LDLT<Eigen::MatrixXd> ldlt(h);
    Eigen::VectorXd step = ldlt.solve(-g);
    if (ldlt.info() != Eigen::Success || !step.allFinite() || step.dot(g) >= 0.0) step = -g;
    // Backtracking on the Armijo condition.
    double t = 1.0;
    Eigen::VectorXd next;
    double next_loss = loss;
    for (int bt = 0; bt < 60; ++bt, t *= 0.5) {
      next = theta + t * step;
      next_loss = objective(next, nullptr, nullptr);
      if (next_loss <= loss + 1e-4 * t * step.dot(g)) break;
    }
    theta = next;
    loss = objective(theta, &g, &h);
    fit.iterations = it + 1;
    if (theta.cwiseAbs().maxCoeff() > 1e3) break;  // diverging: separable sample
  }
  if (!fit.converged) {
    fit.grad_norm = g.norm();
    fit.converged = fit.grad_norm < tol;
  }
  fit.w.assign(theta.data(), theta.data() + free);
  fit.b.assign(theta.data() + free, theta.data() + dim);
  return fit;
}

VarianceReport verify_claim5(std::size_t n, double temperature, std::size_t trials, const SoftmaxTeacher& teacher,
                             const Distribution& f_dist, std::uint64_t seed) {
  teacher.validate();
  f_dist.validate();
  if (n < 10) throw ValueError("verify_claim5: n must be >= 10");
  if (trials < 500) throw ValueError("verify_claim5: trials must be >= 500");
  if (!(temperature > 0.0)) throw ValueError("verify_claim5: temperature must be positive");
  const std::size_t c = teacher.classes();
  const std::size_t free = c - 1;
  const auto eps = softmax_sensitivity(teacher, temperature, f_dist);
  const double ef2 = f_dist.second_moment();

  VarianceReport r;
  r.claim = "claim5";
  r.n = n;
  r.trials = trials;
  for (std::size_t j = 0; j < free; ++j) {
    r.names.push_back("w" + std::to_string(j));
    r.truth.push_back(teacher.w[j] / temperature);
    r.predicted_var.push_back(1.0 / (n * eps[j] * ef2));
  }
  for (std::size_t j = 0; j < free; ++j) {
    r.names.push_back("b" + std::to_string(j));
    r.truth.push_back(teacher.b[j] / temperature);
    r.predicted_var.push_back(1.0 / (n * eps[j]));
  }

  std::uniform_real_distribution<double> unif(0.0, 1.0);
  std::vector<std::vector<double>> est;
  std::vector<double> f(n), z(c), q;
  std::vector<int> y(n);
  for (std::size_t t = 0; t < trials; ++t) {
    std::mt19937_64 rng(derive_seed(seed, t));
    for (std::size_t i = 0; i < n; ++i) {
      f[i] = f_dist.sample(rng);
      const double u = unif(rng);
      for (std::size_t j = 0; j < c; ++j) z[j] = (teacher.w[j] * f[i] + teacher.b[j]) / temperature;
      softmax_into(z, q);
      std::size_t label = c - 1;
      double cum = 0.0;
      for (std::size_t j = 0; j < c; ++j) {
        cum += q[j];
        if (u < cum) {
          label = j;
          break;
        }
      }
      y[i] = static_cast<int>(label);
    }
    SoftmaxFit fit = fit_softmax(f, y, c, teacher.w[free] / temperature, teacher.b[free] / temperature);
    if (!fit.converged) {
      ++r.excluded;
      continue;
    }
    std::vector<double> e = fit.w;
    e.insert(e.end(), fit.b.begin(), fit.b.end());
    est.push_back(std::move(e));
  }
  summarize(est, r);
  // The prediction is a diagonal-Fisher approximation; the band follows the
  // symmetric two-class case, where it is exact asymptotically.
  r.pass = r.excluded * 2 < trials && ratios_within(r, 0.7, 1.4);
  return r;
}

ScalingResult claim5_scaling(const std::vector<std::size_t>& ns, std::size_t trials, const SoftmaxTeacher& teacher,
                             const Distribution& f_dist, std::uint64_t seed) {
  if (ns.size() < 2) throw ValueError("claim5_scaling: need at least two sample sizes");
  ScalingResult s;
  s.ns = ns;
  for (auto n : ns) s.reports.push_back(verify_claim5(n, 1.0, trials, teacher, f_dist, seed));
  const std::size_t k = s.reports.front().names.size();
  for (std::size_t a = 0; a < ns.size(); ++a) {
    for (std::size_t b = a + 1; b < ns.size(); ++b) {
      for (std::size_t i = 0; i < k; ++i) {
        const double ra = ns[a] * s.reports[a].empirical_var[i];
        const double rb = ns[b] * s.reports[b].empirical_var[i];
        const double dev = std::abs(ra / rb - 1.0);
        s.worst_deviation = std::isfinite(dev) ? std::max(s.worst_deviation, dev)
                                               : std::numeric_limits<double>::infinity();
      }
    }
  }
  s.pass = s.worst_deviation <= 0.2;
  return s;
}

TemperatureResult claim5_temperature(std::size_t n, const std::vector<double>& temperatures, std::size_t trials,
                                     const SoftmaxTeacher& teacher, const Distribution& f_dist, std::uint64_t seed) {
  if (temperatures.size() < 2) throw ValueError("claim5_temperature: need at least two temperatures");
  TemperatureResult r;
  r.temperatures = temperatures;
  for (double t : temperatures) {
    r.reports.push_back(verify_claim5(n, t, trials, teacher, f_dist, seed));
    r.total_variance.push_back(r.reports.back().total_empirical());
  }
  r.pass = true;
  for (std::size_t i = 1; i < temperatures.size(); ++i) {
    if (!(temperatures[i] > temperatures[i - 1])) throw ValueError("claim5_temperature: temperatures must increase");
    if (!(r.total_variance[i] < r.total_variance[i - 1])) r.pass = false;
  }
  return r;
}

nlohmann::json to_json(const StabilityReport& r) {
  return {{"claim", "stability"},
          {"n", r.n},
          {"beta", r.beta},
          {"confidence", r.confidence},
          {"epsilon", r.epsilon},
          {"threshold", r.threshold},
          {"predicted_fm_stabler", r.predicted_fm_stabler},
          {"empirical_fm_stabler", r.empirical_fm_stabler},
          {"variance_ratio", r.variance_ratio},
          {"feature_mimic", to_json(r.feature_mimic)},
          {"classification", to_json(r.classification)},
          {"pass", r.pass}};
}

StabilityReport compare_stability(std::size_t n, double beta, double confidence, std::size_t trials,
                                  std::uint64_t seed) {
  if (!(confidence > 0.0 && confidence < 1.0)) throw ValueError("compare_stability: confidence must lie in (0, 1)");
  const Distribution shared{Distribution::Kind::normal, 0.0, 1.0};
  StabilityReport r;
  r.n = n;
  r.beta = beta;
  r.confidence = confidence;
  r.feature_mimic = verify_claim4(n, beta, trials, shared, derive_seed(seed, 0));
  SoftmaxTeacher teacher{{0.0, 0.0}, {std::log(confidence / (1.0 - confidence)), 0.0}};
  r.classification = verify_claim5(n, 1.0, trials, teacher, shared, derive_seed(seed, 1));
  r.epsilon = confidence * (1.0 - confidence);
  r.threshold = 2.0 * beta * shared.second_moment() / shared.second_moment();
  r.predicted_fm_stabler = r.epsilon < r.threshold;
  r.empirical_fm_stabler = true;
  for (std::size_t i = 0; i < 2; ++i) {
    r.variance_ratio.push_back(r.classification.empirical_var[i] / r.feature_mimic.empirical_var[i]);
    if (!(r.feature_mimic.empirical_var[i] < r.classification.empirical_var[i])) r.empirical_fm_stabler = false;
  }
  r.pass = r.predicted_fm_stabler == r.empirical_fm_stabler;
  return r;
}

}  // namespace practise::theory
