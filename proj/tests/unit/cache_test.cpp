// Copyright (c) The moesim Authors.
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <algorithm>
#include <numeric>
#include <random>

#include "moesim/cache.hpp"
#include "moesim/error.hpp"
#include "oracles.hpp"

namespace moesim {
namespace {

CacheState uniform_cache(int n, double ws_slots, double cache_slots) {
  return CacheState(std::vector<double>(n, 1.0), std::vector<int>(n, 0), ws_slots, cache_slots,
                    16);
}

TEST(CacheState, StartsOnHost) {
  const auto c = uniform_cache(4, 2, 2);
  for (int i = 0; i < 4; ++i) EXPECT_EQ(c.tier(i), Tier::Host);
  EXPECT_EQ(c.used(Tier::Workspace), 0);
  EXPECT_EQ(c.free(Tier::Cache), 2);
  EXPECT_NO_THROW(c.check_invariants());
}

TEST(CacheState, MoveRespectsCapacity) {
  auto c = uniform_cache(3, 1, 1);
  c.move(0, Tier::Workspace);
  EXPECT_FALSE(c.fits(1, Tier::Workspace));
  EXPECT_THROW(c.move(1, Tier::Workspace), InfeasibleError);
  c.move(1, Tier::Cache);
  EXPECT_EQ(c.members(Tier::Cache), (std::set<int>{1}));
  c.move(0, Tier::Host);
  EXPECT_TRUE(c.fits(1, Tier::Workspace));
}

TEST(CacheState, RecencyDecaysByHalfLife) {
  auto c = uniform_cache(2, 1, 1);
  c.record_access(0, 0);
  EXPECT_DOUBLE_EQ(c.recent(0, 0), 1.0);
  EXPECT_NEAR(c.recent(0, 16), 0.5, 1e-12);
  c.record_access(0, 16);
  EXPECT_NEAR(c.recent(0, 16), 1.5, 1e-12);
  EXPECT_EQ(c.recent(1, 5), 0);
}

TEST(CacheState, FuzzedEventsKeepInvariants) {
  const auto t = oracle::cache_fuzz(100000, 77);
  EXPECT_EQ(t.cases, 100000u);
  EXPECT_TRUE(t.ok()) << t.first;
}

TEST(Evict, SpecExamples) {
  auto c = uniform_cache(3, 0, 3);
  for (int i = 0; i < 3; ++i) c.move(i, Tier::Cache);
  const std::vector<double> scores{0.9, 0.5, 0.1};
  EXPECT_TRUE(evict(c, 0, scores).empty());
  EXPECT_THROW(evict(c, 4, scores), InfeasibleError);
  EXPECT_EQ(evict(c, 2, scores), (std::vector<int>{0, 1}));
  EXPECT_EQ(c.tier(0), Tier::Host);
  EXPECT_EQ(c.tier(2), Tier::Cache);
}

TEST(Evict, TiesBreakByLowerId) {
  auto c = uniform_cache(4, 0, 4);
  for (int i = 0; i < 4; ++i) c.move(i, Tier::Cache);
  EXPECT_EQ(evict(c, 2, std::vector<double>{0.5, 0.7, 0.5, 0.5}), (std::vector<int>{1, 0}));
}

TEST(Evict, MatchesExhaustiveOracle) {
  const auto t = oracle::evict_oracle(2000, 13);
  EXPECT_TRUE(t.ok()) << t.failures << " mismatches, first: " << t.first;
}

TEST(Placement, EverythingFitsWhenCapacityIsAmple) {
  const auto c = uniform_cache(6, 4, 3);  // one workspace slot is the working set
  std::vector<int> ids{0, 1, 2, 3, 4, 5};
  const std::vector<double> pop{0.1, 0.3, 0.05, 0.2, 0.25, 0.1};
  const auto plan = plan_initial_placement(c, ids, pop, 1);
  EXPECT_EQ(plan.eta_gs, 6);
  for (Tier t : plan.assignment) EXPECT_NE(t, Tier::Host);
}

TEST(Placement, FillsMostPopularFirst) {
  const auto c = uniform_cache(8, 3, 2);
  std::vector<int> ids(8);
  std::iota(ids.begin(), ids.end(), 0);
  const std::vector<double> pop{0.05, 0.3, 0.1, 0.2, 0.02, 0.15, 0.08, 0.1};
  const auto plan = plan_initial_placement(c, ids, pop, 0);
  EXPECT_EQ(plan.eta_gs, 5);
  EXPECT_EQ(plan.popularity.front(), 1);
  std::set<int> placed;
  for (int id = 0; id < 8; ++id) {
    if (plan.assignment[id] != Tier::Host) placed.insert(id);
  }
  EXPECT_EQ(placed, (std::set<int>{1, 3, 5, 2, 7}));
  auto applied = c;
  apply_placement(applied, plan);
  EXPECT_EQ(applied.used(Tier::Workspace) + applied.used(Tier::Cache), 5);
  EXPECT_NO_THROW(applied.check_invariants());
}

TEST(Placement, ZeroCacheFillsOnlyWorkspace) {
  const auto c = uniform_cache(5, 2, 0);
  std::vector<int> ids{0, 1, 2, 3, 4};
  const auto plan = plan_initial_placement(c, ids, std::vector<double>(5, 0.2), 0);
  EXPECT_EQ(plan.eta_gs, 2);
  for (Tier t : plan.assignment) EXPECT_NE(t, Tier::Cache);
  EXPECT_THROW(plan_initial_placement(c, ids, std::vector<double>(5, 0.2), 3), InfeasibleError);
}

}  // namespace
}  // namespace moesim
