#include "practise/landscape.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <limits>

#include "practise/errors.hpp"

namespace practise {

ParamVector interpolate(const ParamVector& a, const ParamVector& b, double lambda) {
  if (a.layout != b.layout || a.values.size() != b.values.size()) {
    throw DimensionError("interpolate: parameter layouts differ");
  }
  if (!(lambda >= 0.0 && lambda <= 1.0)) throw ValueError("interpolate: lambda must lie in [0, 1]");
  ParamVector out{std::vector<double>(a.values.size()), a.layout};
  // Endpoints are returned exactly rather than through the blend formula.
  if (lambda == 0.0) {
    out.values = a.values;
  } else if (lambda == 1.0) {
    out.values = b.values;
  } else {
    for (std::size_t i = 0; i < a.values.size(); ++i) out.values[i] = lambda * b.values[i] + (1.0 - lambda) * a.values[i];
  }
  return out;
}

std::vector<double> uniform_lambdas(std::size_t points) {
  if (points < 2) throw ValueError("interpolation grid needs at least 2 points");
  std::vector<double> out(points);
  for (std::size_t i = 0; i < points; ++i) out[i] = static_cast<double>(i) / static_cast<double>(points - 1);
  return out;
}

double evaluate_loss(const ResNetModel& model, const Dataset& data, const CurveLoss& loss) {
  if (data.size() == 0) throw ValueError("evaluate_loss: empty dataset");
  if (loss.kind == LossKind::cross_entropy) return cross_entropy(model, data);
  if (!loss.teacher) throw ValueError("feature_mse curve requires a teacher model");
  Tensor s = feature(model, data.features);
  Tensor t = feature(*loss.teacher, data.features);
  ad::Graph g;
  return ad::feature_mse(g.constant(std::move(s)), g.constant(std::move(t)), 1.0).value()[0];
}

InterpolationCurve loss_curve(const ResNetModel& architecture, const ParamVector& a, const ParamVector& b,
                              const Dataset& data, const CurveLoss& loss, const std::vector<double>& lambdas) {
  if (data.size() == 0) throw ValueError("loss_curve: empty dataset");
  if (lambdas.size() < 2 || lambdas.front() != 0.0 || lambdas.back() != 1.0) {
    throw ValueError("loss_curve: lambda grid must span [0, 1]");
  }
  for (std::size_t i = 1; i < lambdas.size(); ++i) {
    if (!(lambdas[i] > lambdas[i - 1])) throw ValueError("loss_curve: lambda grid must be strictly increasing");
  }
  InterpolationCurve curve;
  curve.lambdas = lambdas;
  for (double lam : lambdas) {
    ParamVector p = interpolate(a, b, lam);
    curve.losses.push_back(evaluate_loss(unflatten(p.layout, p.values, architecture), data, loss));
  }
  return curve;
}

double convexity_gap(const InterpolationCurve& curve) {
  const double l0 = curve.losses.front();
  const double l1 = curve.losses.back();
  if (curve.lambdas.size() < 3) return 0.0;
  double gap = -std::numeric_limits<double>::infinity();
  for (std::size_t i = 1; i + 1 < curve.lambdas.size(); ++i) {
    const double lam = curve.lambdas[i];
    const double chord = lam * l1 + (1.0 - lam) * l0;
    gap = std::max(gap, curve.losses[i] - chord);
  }
  return gap;
}

LeakageResult loss_leakage(const InterpolationCurve& curve) {
  const double l0 = curve.losses.front();
  const double l1 = curve.losses.back();
  if (curve.lambdas.size() < 3) return {0.0, 0.0};
  double raw = -std::numeric_limits<double>::infinity();
  for (std::size_t i = 1; i + 1 < curve.lambdas.size(); ++i) {
    const double lam = curve.lambdas[i];
    raw = std::max(raw, lam * l1 + (1.0 - lam) * l0 - curve.losses[i]);
  }
  return {raw, std::max(raw, 0.0)};
}

void write_curve_csv(const InterpolationCurve& curve, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  out << "lambda,loss\n";
  char buf[64];
  for (std::size_t i = 0; i < curve.lambdas.size(); ++i) {
    auto r = std::to_chars(buf, buf + sizeof(buf), curve.lambdas[i]);
    out.write(buf, r.ptr - buf);
    out << ',';
    r = std::to_chars(buf, buf + sizeof(buf), curve.losses[i]);
    out.write(buf, r.ptr - buf);
    out << '\n';
  }
  if (!out) throw IoError("failed writing " + path.string());
}

nlohmann::json curve_sidecar(const InterpolationCurve& curve) {
  auto leak = loss_leakage(curve);
  return {{"endpoint_a", curve.endpoint_a},
          {"endpoint_b", curve.endpoint_b},
          {"points", curve.lambdas.size()},
          {"loss_at_0", curve.losses.front()},
          {"loss_at_1", curve.losses.back()},
          {"convexity_gap", convexity_gap(curve)},
          {"loss_leakage", leak.raw},
          {"loss_leakage_clamped", leak.clamped}};
}

}  // namespace practise
