// Copyright (c) The moesim Authors.
// SPDX-License-Identifier: Apache-2.0

// Three-tier expert residency (workspace, cache, host) with byte capacities,
// decayed recency counters, eviction and popularity-based initial placement.

#pragma once

#include <cstdint>
#include <set>
#include <span>
#include <string>
#include <vector>

namespace moesim {

enum class Tier { Workspace = 0, Cache = 1, Host = 2 };
const char* tier_name(Tier t);

/// Experts are dense ids 0..n-1. Every expert sits in exactly one tier and
/// the device tiers never exceed their capacities; every mutation keeps that.
class CacheState {
 public:
  CacheState() = default;
  /// All experts start on the host.
  CacheState(std::vector<double> sizes, std::vector<int> layer_of,
             double workspace_capacity, double cache_capacity,
             double recency_half_life);

  std::size_t size() const { return sizes_.size(); }
  Tier tier(int id) const { return tier_[id]; }
  bool on_device(int id) const { return tier_[id] != Tier::Host; }
  double expert_size(int id) const { return sizes_[id]; }
  int layer_of(int id) const { return layer_of_[id]; }
  double capacity(Tier t) const;
  double used(Tier t) const { return used_[static_cast<int>(t)]; }
  double free(Tier t) const { return capacity(t) - used(t); }
  const std::set<int>& members(Tier t) const { return members_[static_cast<int>(t)]; }

  /// Throws InfeasibleError when the destination lacks room.
  void move(int id, Tier to);
  bool fits(int id, Tier to) const;

  void set_importance(std::vector<double> importance);
  double importance(int id) const { return importance_[id]; }
  /// Decayed access counter at `now`, then incremented.
  void record_access(int id, double now);
  double recent(int id, double now) const;

  /// Throws RuntimeError-kind Error describing the first broken invariant.
  void check_invariants() const;

 private:
  std::vector<double> sizes_;
  std::vector<int> layer_of_;
  std::vector<Tier> tier_;
  std::set<int> members_[3];
  double used_[3] = {0, 0, 0};
  double capacity_[2] = {0, 0};
  std::vector<double> importance_;
  std::vector<double> recent_;
  std::vector<double> recent_at_;
  double half_life_ = 256;
};

/// Highest score first, ties to the lower id, until `bytes_needed` are
/// freed from the cache tier; evicted experts move to the host. Throws
/// InfeasibleError when bytes_needed exceeds the cache capacity.
std::vector<int> evict(CacheState& cache, double bytes_needed,
                       std::span<const double> scores);

struct PlacementPlan {
  int eta_gs = 0;                // experts placed on the device
  std::vector<int> popularity;   // ids, most popular first
  std::vector<Tier> assignment;  // per id
};

/// Walks `candidates` by descending popularity (ties to the lower id),
/// filling the workspace and then the cache while the next expert fits.
/// Experts already on the device are left in place. Throws InfeasibleError
/// when the workspace cannot hold `working_set` bytes.
PlacementPlan plan_initial_placement(const CacheState& cache,
                                     std::span<const int> candidates,
                                     std::span<const double> popularity,
                                     double working_set);
void apply_placement(CacheState& cache, const PlacementPlan& plan);

}  // namespace moesim
