// Copyright (c) The moesim Authors.
// SPDX-License-Identifier: Apache-2.0

#include <algorithm>
#include <cmath>
#include <random>

#include "moesim/error.hpp"
#include "moesim/moe.hpp"

namespace moesim {

namespace {

double norm(std::span<const double> v) {
  double s = 0;
  for (double x : v) s += x * x;
  return std::sqrt(s);
}

double cosine(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw InputDomainError("parameter dimensions differ");
  const double na = norm(a);
  const double nb = norm(b);
  if (na == 0 || nb == 0) throw InputDomainError("zero parameter vector");
  double d = 0;
  for (std::size_t i = 0; i < a.size(); ++i) d += a[i] * b[i];
  return std::clamp(d / (na * nb), -1.0, 1.0);
}

double symmetric_kl(std::span<const double> p, std::span<const double> q) {
  return 0.5 * (kl_divergence(p, q) + kl_divergence(q, p));
}

double func_from_outputs(const std::vector<std::vector<double>>& a,
                         const std::vector<std::vector<double>>& b) {
  double acc = 0;
  for (std::size_t i = 0; i < a.size(); ++i) acc += symmetric_kl(a[i], b[i]);
  return std::clamp(1.0 - acc / static_cast<double>(a.size()), 0.0, 1.0);
}

std::vector<std::vector<double>> outputs_for(const Expert& e,
                                             const CalibrationSet& cal) {
  if (cal.probes.empty()) throw InputDomainError("calibration set is empty");
  std::vector<std::vector<double>> out;
  out.reserve(cal.probes.size());
  for (const auto& probe : cal.probes) {
    out.push_back(expert_output(e.params, probe, cal));
  }
  return out;
}

void check_alpha(double alpha_sim) {
  if (!(alpha_sim >= 0 && alpha_sim <= 1)) {
    throw ConfigError("alpha_sim must lie in [0,1]");
  }
}

}  // namespace

CalibrationSet make_calibration(int param_dim, int n_probes, int output_dim,
                                std::uint64_t seed) {
  if (param_dim <= 0 || output_dim <= 0 || n_probes < 0) {
    throw ConfigError("invalid calibration dimensions");
  }
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  CalibrationSet cal;
  cal.param_dim = param_dim;
  cal.output_dim = output_dim;
  cal.probes.assign(n_probes, std::vector<double>(param_dim));
  for (auto& p : cal.probes) {
    for (double& v : p) v = normal(rng);
  }
  // Unit-variance logits for unit-variance inputs.
  const double scale = 1.0 / std::sqrt(static_cast<double>(param_dim));
  cal.projection.resize(static_cast<std::size_t>(output_dim) * param_dim);
  for (double& v : cal.projection) v = scale * normal(rng);
  return cal;
}

std::vector<double> expert_output(std::span<const double> params,
                                  std::span<const double> probe,
                                  const CalibrationSet& cal) {
  if (params.size() != static_cast<std::size_t>(cal.param_dim) ||
      probe.size() != params.size()) {
    throw InputDomainError("expert output dimension mismatch");
  }
  std::vector<double> logits(cal.output_dim, 0.0);
  for (int o = 0; o < cal.output_dim; ++o) {
    const double* row = &cal.projection[static_cast<std::size_t>(o) * cal.param_dim];
    double s = 0;
    for (int d = 0; d < cal.param_dim; ++d) s += row[d] * params[d] * probe[d];
    logits[o] = s;
  }
  const double hi = *std::max_element(logits.begin(), logits.end());
  double z = 0;
  for (double& v : logits) {
    v = std::exp(v - hi);
    z += v;
  }
  for (double& v : logits) v /= z;
  return logits;
}

double kl_divergence(std::span<const double> p, std::span<const double> q) {
  if (p.size() != q.size()) throw InputDomainError("distribution sizes differ");
  double kl = 0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    if (p[i] <= 0) continue;
    if (q[i] <= 0) return INFINITY;
    kl += p[i] * std::log(p[i] / q[i]);
  }
  return std::max(0.0, kl);
}

double param_similarity(const Expert& a, const Expert& b) {
  return cosine(a.params, b.params);
}

double func_similarity(const Expert& a, const Expert& b,
                       const CalibrationSet& cal) {
  return func_from_outputs(outputs_for(a, cal), outputs_for(b, cal));
}

double combined_similarity(const Expert& a, const Expert& b, double alpha_sim,
                           const CalibrationSet& cal) {
  check_alpha(alpha_sim);
  return alpha_sim * param_similarity(a, b) +
         (1.0 - alpha_sim) * func_similarity(a, b, cal);
}

std::vector<std::vector<double>> similarity_matrix(
    std::span<const Expert> experts, double alpha_sim,
    const CalibrationSet& cal) {
  check_alpha(alpha_sim);
  const std::size_t n = experts.size();
  std::vector<std::vector<std::vector<double>>> outputs;
  outputs.reserve(n);
  for (const auto& e : experts) outputs.push_back(outputs_for(e, cal));
  std::vector<std::vector<double>> m(n, std::vector<double>(n, 0.0));
  for (std::size_t i = 0; i < n; ++i) {
    m[i][i] = 1.0;
    for (std::size_t j = i + 1; j < n; ++j) {
      const double s = alpha_sim * cosine(experts[i].params, experts[j].params) +
                       (1.0 - alpha_sim) * func_from_outputs(outputs[i], outputs[j]);
      m[i][j] = s;
      m[j][i] = s;
    }
  }
  return m;
}

}  // namespace moesim
