// Copyright (c) The moesim Authors.
// SPDX-License-Identifier: Apache-2.0

// Offloading decisions: prefetch threshold, prefetch choice, hybrid
// eviction score, offload priority and misprediction correction.

#pragma once

#include <functional>
#include <span>
#include <vector>

#include "moesim/cache.hpp"

namespace moesim {

enum class ThresholdMode { ResourceAware, StorageFraction };

struct OffloadPolicy {
  double gamma_prio = 0.6;
  double theta_base = 0.3;
  double delta_pref = 0.5;
  double gamma_cachethr = 0.6;
  double delta_evict = 0.5;
  double lambda_evict = 0.5;
  ThresholdMode threshold_mode = ThresholdMode::ResourceAware;
  /// Divide by S_b instead of multiplying, so low stability raises the bar.
  bool conservative_threshold = false;
  double substitution_sim_min = 0.85;
  double priority_quantile = 0.9;
  bool substitution = true;
};

void validate(const OffloadPolicy& p);

/// Clamped to [0,1]. Resource-aware: theta_base * S_b * (1 + delta * a/t);
/// conservative: theta_base / max(S_b, 1e-3) * (1 + delta * a/t);
/// storage-fraction: gamma_cachethr * a/t.
double prefetch_threshold(const OffloadPolicy& policy, double s_b,
                          double mem_avail_gpu, double mem_total_gpu);

/// Host-resident ids (in `ids`, parallel to `probs`) with p > theta, by
/// descending p (ties to the lower id), while the running byte total stays
/// within `budget_bytes`.
std::vector<int> decide_prefetch(std::span<const double> probs,
                                 std::span<const int> ids, double theta,
                                 const CacheState& cache, double budget_bytes);

/// (1-d)(1-p) + d(l/f_recent + (1-l)/I), with f_recent and I floored at 1e-6.
double eviction_score(double p_next, double f_recent, double importance,
                      double delta_evict, double lambda_evict);

/// gamma*f + (1-gamma)*(s/L)/normalizer.
double offload_priority(double f_act, double size, double comm_latency_est,
                        double gamma_prio, double normalizer);

/// Value at quantile q of `values` (nearest rank on the sorted copy).
double quantile(std::vector<double> values, double q);

struct Correction {
  enum class Kind { Substitute, Fetch } kind = Kind::Fetch;
  int expert = -1;     // substitute id, or the needed id for a fetch
  double penalty = 0;  // 1 - similarity of the substitute
};

using PairSimilarity = std::function<double(int, int)>;

/// Substitutes the most similar device-resident expert of the same layer
/// when its similarity reaches the floor, unless the needed expert is
/// high priority (priority above `priority_cut`) or substitution is off.
Correction correct_misprediction(int needed, const CacheState& cache,
                                 const PairSimilarity& similarity,
                                 const OffloadPolicy& policy,
                                 double needed_priority, double priority_cut);

}  // namespace moesim
