// Copyright (c) The moesim Authors.
// SPDX-License-Identifier: Apache-2.0

#include "moesim/perfmodel.hpp"

#include <algorithm>
#include <cmath>

#include "moesim/error.hpp"

namespace moesim {

namespace {

constexpr const char* kTargetNames[kTargets] = {"comp_latency", "comm_latency",
                                                "mem_usage"};

double dot(std::span<const double> a, std::span<const double> b) {
  double s = 0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

void check_shape(const RegressionModel& model, std::span<const double> x) {
  for (const auto& c : model.coefficients) {
    if (c.size() != x.size()) {
      throw SchemaError("feature vector has " + std::to_string(x.size()) +
                        " entries, model expects " + std::to_string(c.size()));
    }
  }
}

double saturating_reciprocal(double v, double scale, double cap) {
  if (!(v > 0)) return cap;
  return std::min(cap, scale / v);
}

}  // namespace

const std::vector<std::string>& FeatureVector::names() {
  static const std::vector<std::string> out = [] {
    const char* f[kResource] = {"inv_gpu_compute", "inv_bw_gpu_cpu",
                                "gpu_mem_avail_frac", "gpu_util"};
    const char* g[kConfig] = {"retained_experts", "expert_size_gb", "top_k",
                              "moe_layers"};
    std::vector<std::string> n{"bias"};
    for (auto* s : f) n.emplace_back(s);
    for (auto* s : g) n.emplace_back(s);
    for (auto* a : f) {
      for (auto* b : g) n.push_back(std::string(a) + "*" + b);
    }
    return n;
  }();
  return out;
}

FeatureVector make_features(std::span<const double> resource,
                            std::span<const double> config) {
  if (resource.size() != FeatureVector::kResource ||
      config.size() != FeatureVector::kConfig) {
    throw SchemaError("feature groups have the wrong arity");
  }
  FeatureVector fv;
  std::copy(resource.begin(), resource.end(), fv.resource.begin());
  std::copy(config.begin(), config.end(), fv.config.begin());
  fv.values.reserve(FeatureVector::kSize);
  fv.values.push_back(1.0);
  fv.values.insert(fv.values.end(), resource.begin(), resource.end());
  fv.values.insert(fv.values.end(), config.begin(), config.end());
  for (double f : resource) {
    for (double g : config) fv.values.push_back(f * g);
  }
  return fv;
}

FeatureVector extract_features(const ResourceSample& s,
                               const ConfigSummary& c, double cap) {
  const double avail_frac =
      s.gpu_mem_total > 0 ? s.gpu_mem_avail() / s.gpu_mem_total : 0.0;
  const std::array<double, FeatureVector::kResource> f = {
      saturating_reciprocal(s.gpu_compute, 1e12, cap),
      saturating_reciprocal(s.bw_gpu_cpu, 1e9, cap), avail_frac, s.gpu_util};
  const std::array<double, FeatureVector::kConfig> g = {
      c.retained_experts, c.expert_size / 1e9, c.top_k, c.moe_layers};
  return make_features(f, g);
}

double& PredictionTargets::at(Target t) {
  switch (t) {
    case Target::CompLatency: return comp_latency;
    case Target::CommLatency: return comm_latency;
    case Target::MemUsage: return mem_usage;
  }
  throw SchemaError("unknown target");
}

double PredictionTargets::at(Target t) const {
  return const_cast<PredictionTargets*>(this)->at(t);
}

RegressionModel RegressionModel::zeros(std::size_t dim, double learning_rate) {
  if (!(learning_rate > 0)) throw ConfigError("learning rate must be positive");
  RegressionModel m;
  for (auto& c : m.coefficients) c.assign(dim, 0.0);
  m.learning_rate = learning_rate;
  return m;
}

PredictionTargets predict_raw(const RegressionModel& model,
                              std::span<const double> x) {
  check_shape(model, x);
  PredictionTargets out;
  for (std::size_t t = 0; t < kTargets; ++t) {
    out.at(static_cast<Target>(t)) = dot(model.coefficients[t], x);
  }
  return out;
}

PredictionTargets predict(const RegressionModel& model,
                          std::span<const double> x) {
  PredictionTargets out = predict_raw(model, x);
  for (std::size_t t = 0; t < kTargets; ++t) {
    double& v = out.at(static_cast<Target>(t));
    v = std::max(0.0, v);
  }
  return out;
}

double squared_loss(const RegressionModel& model, std::span<const double> x,
                    const PredictionTargets& observed, Target t) {
  const double e = predict_raw(model, x).at(t) - observed.at(t);
  return 0.5 * e * e;
}

std::array<std::vector<double>, kTargets> loss_gradient(
    const RegressionModel& model, std::span<const double> x,
    const PredictionTargets& observed) {
  const PredictionTargets raw = predict_raw(model, x);
  std::array<std::vector<double>, kTargets> grad;
  for (std::size_t t = 0; t < kTargets; ++t) {
    const double e = raw.at(static_cast<Target>(t)) -
                     observed.at(static_cast<Target>(t));
    grad[t].resize(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) grad[t][i] = e * x[i];
  }
  return grad;
}

RegressionModel online_update(const RegressionModel& model,
                              std::span<const double> x,
                              const PredictionTargets& observed) {
  if (!(model.learning_rate > 0)) {
    throw ConfigError("learning rate must be positive");
  }
  for (std::size_t t = 0; t < kTargets; ++t) {
    if (!std::isfinite(observed.at(static_cast<Target>(t)))) {
      throw InputDomainError("non-finite observation");
    }
  }
  for (double v : x) {
    if (!std::isfinite(v)) throw InputDomainError("non-finite feature");
  }
  const auto grad = loss_gradient(model, x, observed);
  RegressionModel next = model;
  for (std::size_t t = 0; t < kTargets; ++t) {
    for (std::size_t i = 0; i < x.size(); ++i) {
      next.coefficients[t][i] -= model.learning_rate * grad[t][i];
    }
  }
  ++next.update_count;
  return next;
}

double comm_latency(double expert_size, double bandwidth, bool resident_in_gpu) {
  if (!(bandwidth > 0)) throw InputDomainError("bandwidth must be positive");
  if (resident_in_gpu) return 0.0;
  return expert_size / bandwidth;
}

nlohmann::json to_json(const RegressionModel& model) {
  nlohmann::json doc;
  doc["learning_rate"] = model.learning_rate;
  doc["update_count"] = model.update_count;
  const auto& names = FeatureVector::names();
  for (std::size_t t = 0; t < kTargets; ++t) {
    nlohmann::json coefs = nlohmann::json::object();
    const auto& c = model.coefficients[t];
    for (std::size_t i = 0; i < c.size(); ++i) {
      const std::string key =
          c.size() == names.size() ? names[i] : "x" + std::to_string(i);
      coefs[key] = c[i];
    }
    doc[kTargetNames[t]] = coefs;
  }
  return doc;
}

RegressionModel regression_from_json(const nlohmann::json& doc) {
  try {
    RegressionModel m;
    m.learning_rate = doc.at("learning_rate").get<double>();
    m.update_count = doc.at("update_count").get<std::uint64_t>();
    const auto& names = FeatureVector::names();
    for (std::size_t t = 0; t < kTargets; ++t) {
      const auto& coefs = doc.at(kTargetNames[t]);
      auto& c = m.coefficients[t];
      c.resize(coefs.size());
      for (std::size_t i = 0; i < c.size(); ++i) {
        const std::string key =
            c.size() == names.size() ? names[i] : "x" + std::to_string(i);
        c[i] = coefs.at(key).get<double>();
      }
    }
    return m;
  } catch (const nlohmann::json::exception& e) {
    throw SchemaError(std::string("malformed regression document: ") + e.what());
  }
}

}  // namespace moesim
