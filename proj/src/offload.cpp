// Copyright (c) The moesim Authors.
// SPDX-License-Identifier: Apache-2.0

#include "moesim/offload.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "moesim/error.hpp"

namespace moesim {

namespace {
bool unit(double v) { return v >= 0 && v <= 1; }
constexpr double kFloor = 1e-6;
}  // namespace

void validate(const OffloadPolicy& p) {
  if (!unit(p.gamma_prio) || !unit(p.delta_pref) || !unit(p.gamma_cachethr) ||
      !unit(p.delta_evict) || !unit(p.lambda_evict) ||
      !unit(p.substitution_sim_min) || !unit(p.priority_quantile)) {
    throw ConfigError("offload policy weights must lie in [0,1]");
  }
  if (!(p.theta_base >= 0)) throw ConfigError("theta_base must be nonnegative");
}

double prefetch_threshold(const OffloadPolicy& policy, double s_b,
                          double mem_avail_gpu, double mem_total_gpu) {
  if (!(mem_total_gpu > 0)) throw InputDomainError("GPU memory total must be positive");
  const double frac = std::clamp(mem_avail_gpu / mem_total_gpu, 0.0, 1.0);
  double theta;
  if (policy.threshold_mode == ThresholdMode::StorageFraction) {
    theta = policy.gamma_cachethr * frac;
  } else if (policy.conservative_threshold) {
    theta = policy.theta_base / std::max(s_b, 1e-3) * (1.0 + policy.delta_pref * frac);
  } else {
    theta = policy.theta_base * s_b * (1.0 + policy.delta_pref * frac);
  }
  return std::clamp(theta, 0.0, 1.0);
}

std::vector<int> decide_prefetch(std::span<const double> probs,
                                 std::span<const int> ids, double theta,
                                 const CacheState& cache, double budget_bytes) {
  std::vector<std::size_t> order;
  for (std::size_t i = 0; i < probs.size(); ++i) {
    if (probs[i] > theta && !cache.on_device(ids[i])) order.push_back(i);
  }
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    if (probs[a] != probs[b]) return probs[a] > probs[b];
    return ids[a] < ids[b];
  });
  std::vector<int> out;
  double used = 0;
  for (std::size_t i : order) {
    const double s = cache.expert_size(ids[i]);
    if (used + s > budget_bytes + 1e-6) break;
    used += s;
    out.push_back(ids[i]);
  }
  return out;
}

double eviction_score(double p_next, double f_recent, double importance,
                      double delta_evict, double lambda_evict) {
  const double f = std::max(f_recent, kFloor);
  const double imp = std::max(importance, kFloor);
  return (1.0 - delta_evict) * (1.0 - p_next) +
         delta_evict * (lambda_evict / f + (1.0 - lambda_evict) / imp);
}

double offload_priority(double f_act, double size, double comm_latency_est,
                        double gamma_prio, double normalizer) {
  if (!(comm_latency_est > 0)) {
    throw InputDomainError("communication latency estimate must be positive");
  }
  const double ratio = normalizer > 0 ? (size / comm_latency_est) / normalizer : 0.0;
  return gamma_prio * f_act + (1.0 - gamma_prio) * ratio;
}

double quantile(std::vector<double> values, double q) {
  if (values.empty()) return 0.0;
  std::sort(values.begin(), values.end());
  const auto n = values.size();
  auto rank = static_cast<std::size_t>(std::ceil(q * static_cast<double>(n)));
  rank = std::clamp<std::size_t>(rank, 1, n);
  return values[rank - 1];
}

Correction correct_misprediction(int needed, const CacheState& cache,
                                 const PairSimilarity& similarity,
                                 const OffloadPolicy& policy,
                                 double needed_priority, double priority_cut) {
  Correction fetch{Correction::Kind::Fetch, needed, 0.0};
  if (!policy.substitution || needed_priority > priority_cut) return fetch;
  const int layer = cache.layer_of(needed);
  int best = -1;
  double best_sim = -INFINITY;
  for (Tier t : {Tier::Workspace, Tier::Cache}) {
    for (int id : cache.members(t)) {
      if (id == needed || cache.layer_of(id) != layer) continue;
      const double s = similarity(needed, id);
      if (s > best_sim || (s == best_sim && id < best)) {
        best_sim = s;
        best = id;
      }
    }
  }
  if (best < 0 || best_sim < policy.substitution_sim_min) return fetch;
  return {Correction::Kind::Substitute, best, std::max(0.0, 1.0 - best_sim)};
}

}  // namespace moesim
