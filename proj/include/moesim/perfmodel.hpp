// Copyright (c) The moesim Authors.
// SPDX-License-Identifier: Apache-2.0

// Polynomial performance regression over resource and model-config features,
// trained online with squared-error SGD, plus the analytic transfer cost.

#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "moesim/resource.hpp"

namespace moesim {

/// The model-configuration side of a performance query.
struct ConfigSummary {
  double retained_experts = 0;  // per MoE layer, averaged over layers
  double expert_size = 0;       // bytes
  double top_k = 0;
  double moe_layers = 0;
};

/// Layout: [1 | f_0..f_3 | g_0..g_3 | f_i*g_j row-major over (i, j)].
/// Resource features are in 1/TFLOPS, s/GB, fraction, fraction; config
/// features in count, GB, count, count so coefficients stay O(1).
struct FeatureVector {
  static constexpr std::size_t kResource = 4;
  static constexpr std::size_t kConfig = 4;
  static constexpr std::size_t kSize = 1 + kResource + kConfig + kResource * kConfig;

  std::array<double, kResource> resource{};
  std::array<double, kConfig> config{};
  std::vector<double> values;  // full regression input, size kSize

  static const std::vector<std::string>& names();
};

/// Reciprocal features saturate at `cap` when compute or bandwidth is 0.
FeatureVector extract_features(const ResourceSample& sample,
                               const ConfigSummary& config, double cap = 1e6);

/// Builds the full regression input from explicit f and g values.
FeatureVector make_features(std::span<const double> resource,
                            std::span<const double> config);

enum class Target : std::size_t { CompLatency = 0, CommLatency = 1, MemUsage = 2 };
inline constexpr std::size_t kTargets = 3;

struct PredictionTargets {
  double comp_latency = 0;  // seconds
  double comm_latency = 0;  // seconds
  double mem_usage = 0;     // bytes

  double& at(Target t);
  double at(Target t) const;
};

struct RegressionModel {
  std::array<std::vector<double>, kTargets> coefficients;
  double learning_rate = 1e-3;
  std::uint64_t update_count = 0;

  static RegressionModel zeros(std::size_t dim, double learning_rate);
  std::size_t dim() const { return coefficients[0].size(); }
};

/// beta.x per target before the clamp at zero.
PredictionTargets predict_raw(const RegressionModel& model,
                              std::span<const double> x);
PredictionTargets predict(const RegressionModel& model,
                          std::span<const double> x);
inline PredictionTargets predict(const RegressionModel& model,
                                 const FeatureVector& x) {
  return predict(model, x.values);
}

/// Gradient of 0.5*(beta.x - y)^2 with respect to beta, per target. The
/// unclamped prediction is used so the loss stays differentiable.
std::array<std::vector<double>, kTargets> loss_gradient(
    const RegressionModel& model, std::span<const double> x,
    const PredictionTargets& observed);
double squared_loss(const RegressionModel& model, std::span<const double> x,
                    const PredictionTargets& observed, Target t);

/// One SGD step on each target. Throws InputDomainError on a non-finite
/// observation and leaves the model untouched.
RegressionModel online_update(const RegressionModel& model,
                              std::span<const double> x,
                              const PredictionTargets& observed);
inline RegressionModel online_update(const RegressionModel& model,
                                     const FeatureVector& x,
                                     const PredictionTargets& observed) {
  return online_update(model, x.values, observed);
}

/// Seconds to move a non-resident expert; 0 when resident.
double comm_latency(double expert_size, double bandwidth, bool resident_in_gpu);

/// {"learning_rate", "update_count", "comp_latency": {feature: coef}, ...}.
nlohmann::json to_json(const RegressionModel& model);
RegressionModel regression_from_json(const nlohmann::json& doc);

}  // namespace moesim
