#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "json.hpp"

#include "practise/data.hpp"
#include "practise/network.hpp"

namespace practise {

// lambda * b + (1 - lambda) * a, elementwise. lambda = 1 yields b.
ParamVector interpolate(const ParamVector& a, const ParamVector& b, double lambda);

std::vector<double> uniform_lambdas(std::size_t points = 21);

enum class LossKind { cross_entropy, feature_mse };

struct CurveLoss {
  LossKind kind = LossKind::cross_entropy;
  // Required for feature_mse: the frozen model whose features are mimicked.
  const ResNetModel* teacher = nullptr;
};

struct InterpolationCurve {
  std::vector<double> lambdas;
  std::vector<double> losses;
  std::string endpoint_a;
  std::string endpoint_b;
};

double evaluate_loss(const ResNetModel& model, const Dataset& data, const CurveLoss& loss);

// Loss of the interpolated model on every row of `data` at each lambda.
// Both vectors must have the layout of `architecture`.
InterpolationCurve loss_curve(const ResNetModel& architecture, const ParamVector& a, const ParamVector& b,
                              const Dataset& data, const CurveLoss& loss,
                              const std::vector<double>& lambdas = uniform_lambdas());

// max over interior grid points of loss(lambda) - chord(lambda). <= 0 means
// the curve lies on or below its chord everywhere.
double convexity_gap(const InterpolationCurve& curve);

struct LeakageResult {
  double raw = 0.0;      // max over interior grid points of chord - loss
  double clamped = 0.0;  // max(raw, 0)
};
LeakageResult loss_leakage(const InterpolationCurve& curve);

void write_curve_csv(const InterpolationCurve& curve, const std::filesystem::path& path);
nlohmann::json curve_sidecar(const InterpolationCurve& curve);

}  // namespace practise
