// Copyright (c) The moesim Authors.
// SPDX-License-Identifier: Apache-2.0

#include "moesim/cache.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "moesim/error.hpp"

namespace moesim {

namespace {
// Absorbs summation drift when comparing byte totals.
constexpr double kSlack = 1e-6;
}  // namespace

const char* tier_name(Tier t) {
  switch (t) {
    case Tier::Workspace: return "workspace";
    case Tier::Cache: return "cache";
    case Tier::Host: return "host";
  }
  return "?";
}

CacheState::CacheState(std::vector<double> sizes, std::vector<int> layer_of,
                       double workspace_capacity, double cache_capacity,
                       double recency_half_life)
    : sizes_(std::move(sizes)),
      layer_of_(std::move(layer_of)),
      tier_(sizes_.size(), Tier::Host),
      importance_(sizes_.size(), 1.0),
      recent_(sizes_.size(), 0.0),
      recent_at_(sizes_.size(), 0.0),
      half_life_(recency_half_life) {
  if (layer_of_.size() != sizes_.size()) {
    throw SchemaError("expert layer map does not match expert count");
  }
  if (workspace_capacity < 0 || cache_capacity < 0) {
    throw ConfigError("tier capacities must be nonnegative");
  }
  if (!(recency_half_life > 0)) throw ConfigError("recency half-life must be positive");
  capacity_[0] = workspace_capacity;
  capacity_[1] = cache_capacity;
  for (std::size_t i = 0; i < sizes_.size(); ++i) {
    members_[2].insert(static_cast<int>(i));
    used_[2] += sizes_[i];
  }
}

double CacheState::capacity(Tier t) const {
  if (t == Tier::Host) return INFINITY;
  return capacity_[static_cast<int>(t)];
}

bool CacheState::fits(int id, Tier to) const {
  if (tier_[id] == to || to == Tier::Host) return true;
  return used(to) + sizes_[id] <= capacity(to) * (1 + 1e-12) + kSlack;
}

void CacheState::move(int id, Tier to) {
  const Tier from = tier_[id];
  if (from == to) return;
  if (!fits(id, to)) {
    throw InfeasibleError(std::string("no room in ") + tier_name(to) +
                          " for expert " + std::to_string(id));
  }
  members_[static_cast<int>(from)].erase(id);
  used_[static_cast<int>(from)] -= sizes_[id];
  members_[static_cast<int>(to)].insert(id);
  used_[static_cast<int>(to)] += sizes_[id];
  tier_[id] = to;
}

void CacheState::set_importance(std::vector<double> importance) {
  if (importance.size() != sizes_.size()) {
    throw SchemaError("importance vector does not match expert count");
  }
  importance_ = std::move(importance);
}

double CacheState::recent(int id, double now) const {
  const double dt = std::max(0.0, now - recent_at_[id]);
  return recent_[id] * std::exp2(-dt / half_life_);
}

void CacheState::record_access(int id, double now) {
  recent_[id] = recent(id, now) + 1.0;
  recent_at_[id] = now;
}

void CacheState::check_invariants() const {
  std::size_t total = 0;
  for (int t = 0; t < 3; ++t) {
    double bytes = 0;
    for (int id : members_[t]) {
      if (static_cast<int>(tier_[id]) != t) {
        throw Error(ErrorKind::Runtime, "tier membership disagrees with tier map");
      }
      bytes += sizes_[id];
    }
    if (std::abs(bytes - used_[t]) > kSlack * std::max(1.0, bytes) + 1.0) {
      throw Error(ErrorKind::Runtime, "tier byte accounting drifted");
    }
    if (t < 2 && bytes > capacity_[t] + kSlack * std::max(1.0, bytes) + 1.0) {
      throw Error(ErrorKind::Runtime,
                  std::string(tier_name(static_cast<Tier>(t))) + " over capacity");
    }
    total += members_[t].size();
  }
  if (total != sizes_.size()) {
    throw Error(ErrorKind::Runtime, "tiers are not a partition of the experts");
  }
}

std::vector<int> evict(CacheState& cache, double bytes_needed,
                       std::span<const double> scores) {
  if (bytes_needed <= 0) return {};
  if (bytes_needed > cache.capacity(Tier::Cache) + kSlack) {
    throw InfeasibleError("eviction request exceeds cache capacity");
  }
  std::vector<int> order(cache.members(Tier::Cache).begin(),
                         cache.members(Tier::Cache).end());
  std::stable_sort(order.begin(), order.end(),
                   [&](int a, int b) { return scores[a] > scores[b]; });
  std::vector<int> out;
  double freed = 0;
  for (int id : order) {
    if (freed >= bytes_needed - kSlack) break;
    freed += cache.expert_size(id);
    out.push_back(id);
  }
  for (int id : out) cache.move(id, Tier::Host);
  return out;
}

PlacementPlan plan_initial_placement(const CacheState& cache,
                                     std::span<const int> candidates,
                                     std::span<const double> popularity,
                                     double working_set) {
  if (working_set > cache.capacity(Tier::Workspace) + kSlack) {
    throw InfeasibleError("workspace cannot hold the per-layer working set");
  }
  PlacementPlan plan;
  plan.popularity.assign(candidates.begin(), candidates.end());
  std::stable_sort(plan.popularity.begin(), plan.popularity.end(), [&](int a, int b) {
    if (popularity[a] != popularity[b]) return popularity[a] > popularity[b];
    return a < b;
  });
  plan.assignment.resize(cache.size());
  for (std::size_t i = 0; i < cache.size(); ++i) {
    plan.assignment[i] = cache.tier(static_cast<int>(i));
  }
  // Room left after experts that are already resident; the working set
  // stays free in the workspace for demand fetches.
  double room[2] = {cache.free(Tier::Workspace) - working_set, cache.free(Tier::Cache)};
  int tier = 0;
  for (int id : plan.popularity) {
    if (cache.on_device(id)) continue;
    const double s = cache.expert_size(id);
    while (tier < 2 && s > room[tier] + kSlack) ++tier;
    if (tier == 2) break;
    room[tier] -= s;
    plan.assignment[id] = static_cast<Tier>(tier);
    ++plan.eta_gs;
  }
  return plan;
}

void apply_placement(CacheState& cache, const PlacementPlan& plan) {
  for (std::size_t i = 0; i < plan.assignment.size(); ++i) {
    cache.move(static_cast<int>(i), plan.assignment[i]);
  }
}

}  // namespace moesim
