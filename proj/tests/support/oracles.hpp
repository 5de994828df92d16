// Copyright (c) The moesim Authors.
// SPDX-License-Identifier: Apache-2.0

// Brute-force oracles shared by the unit suites and the acceptance binary.
// Each check counts mismatches instead of aborting so callers can report a
// single verdict.

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "moesim/aggregation.hpp"
#include "moesim/cache.hpp"
#include "moesim/error.hpp"
#include "moesim/predictor.hpp"

namespace moesim::oracle {

struct Tally {
  std::uint64_t cases = 0;
  std::uint64_t failures = 0;
  std::string first;

  bool ok() const { return failures == 0; }
  void expect(bool good, const std::string& what) {
    if (good) return;
    if (failures++ == 0) first = what;
  }
};

inline std::vector<double> random_simplex(std::mt19937_64& rng, int n, bool sparse) {
  std::uniform_real_distribution<double> u(0, 1);
  std::vector<double> f(n);
  for (double& v : f) v = (sparse && u(rng) < 0.3) ? 0.0 : u(rng);
  if (std::accumulate(f.begin(), f.end(), 0.0) == 0) f[0] = 1;
  const double sum = std::accumulate(f.begin(), f.end(), 0.0);
  for (double& v : f) v /= sum;
  return f;
}

inline std::vector<int> principals_oracle(const std::vector<double>& f, int target,
                                          double theta) {
  std::vector<int> order(f.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(),
            [&](int a, int b) { return f[a] != f[b] ? f[a] > f[b] : a < b; });
  std::vector<bool> chosen(f.size(), false);
  for (int i = 0; i < target; ++i) chosen[order[i]] = true;
  for (std::size_t i = 0; i < f.size(); ++i) {
    if (f[i] >= theta) chosen[i] = true;
  }
  std::vector<int> out;
  for (std::size_t i = 0; i < f.size(); ++i) {
    if (chosen[i]) out.push_back(static_cast<int>(i));
  }
  return out;
}

// Randomized layers of at most 8 experts; entropy, retention, principals,
// grouping and merging are recomputed by brute force. Integers must match
// exactly, reals within 1e-9.
inline Tally fusion_properties(int cases, std::uint64_t seed) {
  Tally t;
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<int> experts_dist(2, 8);
  std::uniform_real_distribution<double> u(0, 1);
  std::normal_distribution<double> normal(0, 1);
  for (int trial = 0; trial < cases; ++trial) {
    ++t.cases;
    const std::string tag = "case " + std::to_string(trial) + ": ";
    const int E = experts_dist(rng);
    const auto f = random_simplex(rng, E, trial % 3 == 0);

    // Entropy with 0 log 0 = 0, normalized by log E.
    double h = 0;
    for (double v : f) {
      if (v > 0) h -= v * std::log(v);
    }
    const auto ent = layer_entropy(f);
    t.expect(std::abs(ent.h - h) <= 1e-9, tag + "entropy");
    t.expect(std::abs(ent.h_norm - h / std::log(static_cast<double>(E))) <= 1e-9,
             tag + "normalized entropy");

    // Fixed retention on exact eighths: floor(a*E/8) in integer arithmetic.
    const int a = 1 + trial % 8;
    t.expect(fixed_retention(E, a / 8.0) == std::max(1, a * E / 8), tag + "fixed retention");

    // Adaptive retention with long-double reference arithmetic.
    const double r_base = (1 + trial % 10) / 20.0;
    const double delta_r = (trial % 7) / 20.0;
    const int e_min = std::min(1 + trial % 3, E);
    const long double raw = static_cast<long double>(E) *
                            (static_cast<long double>(r_base) +
                             static_cast<long double>(delta_r) * ent.h_norm);
    const int want_ret =
        std::min(E, std::max(e_min, static_cast<int>(std::floor(raw + 1e-12L))));
    t.expect(adaptive_retention(E, r_base, delta_r, ent.h_norm, e_min) == want_ret,
             tag + "adaptive retention");

    // Principals: top-k by frequency (ties to lower slot) plus forced ones.
    const int target = 1 + static_cast<int>(u(rng) * E) % E;
    const double theta = u(rng) * 0.6;
    const auto principals = identify_principals(f, target, theta);
    t.expect(principals == principals_oracle(f, target, theta), tag + "principals");

    // Grouping: exhaustive argmax over a similarity matrix quantized so that
    // ties occur and exercise the first-principal rule.
    std::vector<std::vector<double>> sim(E, std::vector<double>(E, 0));
    for (auto& row : sim) {
      for (double& v : row) v = std::round(u(rng) * 4) / 4;
    }
    const SimilarityFn sfn = [&](int x, int y) { return sim[x][y]; };
    const auto groups = group_experts(E, principals, f, sfn);
    if (groups.size() != principals.size()) {
      t.expect(false, tag + "group count");
      continue;
    }
    std::vector<int> owner(E, -1);
    bool partition = true;
    for (std::size_t g = 0; g < groups.size(); ++g) {
      partition &= groups[g].principal == principals[g];
      owner[groups[g].principal] = static_cast<int>(g);
      for (int m : groups[g].members) {
        partition &= owner[m] == -1 && m != groups[g].principal;
        owner[m] = static_cast<int>(g);
      }
    }
    for (int j = 0; j < E; ++j) {
      partition &= owner[j] != -1;
      if (std::find(principals.begin(), principals.end(), j) != principals.end()) continue;
      int best = 0;
      for (std::size_t g = 1; g < principals.size(); ++g) {
        if (sim[j][principals[g]] > sim[j][principals[best]]) best = static_cast<int>(g);
      }
      partition &= owner[j] == best;
    }
    t.expect(partition, tag + "grouping");

    // Merging: frequency-weighted mean, unweighted when the mass is zero.
    std::vector<Expert> layer(E);
    for (int i = 0; i < E; ++i) {
      layer[i].slot = i;
      layer[i].size = 100;
      layer[i].params.resize(5);
      for (double& p : layer[i].params) p = normal(rng);
    }
    for (const auto& g : groups) {
      std::vector<int> all{g.principal};
      all.insert(all.end(), g.members.begin(), g.members.end());
      double mass = 0;
      for (int i : all) mass += f[i];
      const auto merged = merge_group(g, layer, f);
      bool same = merged.slot == g.principal && merged.size == 100;
      for (int k = 0; k < 5; ++k) {
        double want = 0;
        for (int i : all) {
          const double w = mass > 0 ? f[i] / mass : 1.0 / static_cast<double>(all.size());
          want += w * layer[i].params[k];
        }
        same &= std::abs(merged.params[k] - want) <= 1e-9;
      }
      t.expect(same, tag + "merge of group " + std::to_string(g.principal));
    }
  }
  return t;
}

// Random moves, evictions and accesses checked against a shadow copy of the
// tier assignment after every event.
inline Tally cache_fuzz(std::uint64_t events, std::uint64_t seed) {
  Tally t;
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0, 1);
  const int n = 40;
  std::vector<double> sizes(n);
  for (double& s : sizes) s = 1 + std::floor(u(rng) * 4);
  std::vector<int> layers(n);
  for (int i = 0; i < n; ++i) layers[i] = i % 4;
  CacheState c(sizes, layers, 12, 20, 8);
  std::vector<Tier> shadow(n, Tier::Host);
  const Tier tiers[] = {Tier::Workspace, Tier::Cache, Tier::Host};
  for (std::uint64_t step = 0; step < events && t.ok(); ++step) {
    ++t.cases;
    const std::string tag = "event " + std::to_string(step) + ": ";
    const double r = u(rng);
    if (r < 0.6) {
      const int id = static_cast<int>(u(rng) * n);
      const Tier to = tiers[static_cast<int>(u(rng) * 3)];
      if (c.fits(id, to)) {
        c.move(id, to);
        shadow[id] = to;
      } else {
        bool threw = false;
        try {
          c.move(id, to);
        } catch (const InfeasibleError&) {
          threw = true;
        }
        t.expect(threw, tag + "move past capacity accepted");
      }
    } else if (r < 0.8) {
      std::vector<double> scores(n);
      for (double& s : scores) s = u(rng);
      const double need = u(rng) * c.used(Tier::Cache);
      double freed = 0;
      for (int id : evict(c, need, scores)) {
        t.expect(shadow[id] == Tier::Cache, tag + "evicted a non-cache expert");
        shadow[id] = Tier::Host;
        freed += sizes[id];
      }
      t.expect(freed + 1e-9 >= need, tag + "eviction freed too little");
    } else {
      c.record_access(static_cast<int>(u(rng) * n), static_cast<double>(step));
    }
    try {
      c.check_invariants();
    } catch (const Error& e) {
      t.expect(false, tag + e.what());
    }
    double used[3] = {0, 0, 0};
    std::size_t count[3] = {0, 0, 0};
    for (int id = 0; id < n; ++id) {
      t.expect(c.tier(id) == shadow[id], tag + "tier drifted from shadow");
      used[static_cast<int>(shadow[id])] += sizes[id];
      ++count[static_cast<int>(shadow[id])];
    }
    for (Tier tier : tiers) {
      const int k = static_cast<int>(tier);
      t.expect(c.members(tier).size() == count[k], tag + "member count");
      t.expect(std::abs(c.used(tier) - used[k]) <= 1e-9, tag + "used bytes");
      if (tier != Tier::Host) t.expect(c.used(tier) <= c.capacity(tier) + 1e-9, tag + "capacity");
    }
  }
  return t;
}

// Exhaustive subset search on caches of at most 8 experts. The chosen set
// must free enough, be a minimal prefix, have the best total score of its
// size, and with uniform sizes equal the minimum-count best-score set.
inline Tally evict_oracle(int trials, std::uint64_t seed) {
  Tally t;
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0, 1);
  for (int trial = 0; trial < trials; ++trial) {
    ++t.cases;
    const std::string tag = "trial " + std::to_string(trial) + ": ";
    const int n = 1 + trial % 8;
    const bool uniform = trial % 2 == 0;
    std::vector<double> sizes(n);
    for (double& s : sizes) s = uniform ? 1.0 : 1 + std::floor(u(rng) * 5);
    const double total = std::accumulate(sizes.begin(), sizes.end(), 0.0);
    CacheState c(sizes, std::vector<int>(n, 0), 0, total, 8);
    for (int i = 0; i < n; ++i) c.move(i, Tier::Cache);
    std::vector<double> scores(n);
    for (double& s : scores) s = u(rng);
    const double need = uniform ? std::ceil(u(rng) * n) : std::max(u(rng) * total, 1e-3);

    const auto got = evict(c, need, scores);
    if (got.empty()) {
      t.expect(false, tag + "nothing evicted");
      continue;
    }
    double freed = 0, got_score = 0;
    for (int id : got) {
      freed += sizes[id];
      got_score += scores[id];
    }
    t.expect(freed >= need, tag + "frees too little");
    t.expect(freed - sizes[got.back()] < need, tag + "not a minimal prefix");

    double best_same_count = -1, min_set_score = -1;
    int min_count = n + 1;
    std::vector<int> min_set;
    for (int mask = 1; mask < (1 << n); ++mask) {
      double bytes = 0, score = 0;
      int k = 0;
      for (int i = 0; i < n; ++i) {
        if (mask >> i & 1) {
          bytes += sizes[i];
          score += scores[i];
          ++k;
        }
      }
      if (k == static_cast<int>(got.size())) best_same_count = std::max(best_same_count, score);
      if (bytes < need) continue;
      if (k < min_count || (k == min_count && score > min_set_score)) {
        min_count = k;
        min_set_score = score;
        min_set.clear();
        for (int i = 0; i < n; ++i) {
          if (mask >> i & 1) min_set.push_back(i);
        }
      }
    }
    t.expect(std::abs(got_score - best_same_count) <= 1e-12, tag + "not the best-score set");
    if (uniform) {
      auto sorted = got;
      std::sort(sorted.begin(), sorted.end());
      t.expect(sorted == min_set, tag + "differs from the exhaustive optimum");
    }
  }
  return t;
}

// Largest relative gap between the analytic gradient and central
// differences, measured as |g - fd| / max(1, |fd|).
inline double predictor_gradient_error(std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(-1, 1);
  auto mlp = PredictorMLP::random(6, 5, 4, seed);
  std::vector<double> x(6);
  for (double& v : x) v = u(rng);
  const std::vector<double> target{0, 0.5, 0.25, 0.25};
  const auto g = predictor_gradient(mlp, x, target);
  const double h = 1e-6;
  double worst = 0;
  for (auto field : {&PredictorMLP::w1, &PredictorMLP::b1, &PredictorMLP::w2, &PredictorMLP::b2}) {
    auto& params = mlp.*field;
    const auto& grad = g.*field;
    for (std::size_t i = 0; i < params.size(); ++i) {
      const double orig = params[i];
      params[i] = orig + h;
      const double up = predictor_loss(mlp, x, target);
      params[i] = orig - h;
      const double down = predictor_loss(mlp, x, target);
      params[i] = orig;
      const double fd = (up - down) / (2 * h);
      worst = std::max(worst, std::abs(grad[i] - fd) / std::max(1.0, std::abs(fd)));
    }
  }
  return worst;
}

struct PredictorGap {
  double predictor = 0;  // held-out Top-1
  double baseline = 0;   // frequency baseline on the same held-out examples
};

// Trains on the first layer transition of a synthetic trace and scores the
// held-out tail against the frequency baseline.
inline PredictorGap predictor_gap(double rho, std::uint64_t seed, int epochs) {
  RoutingGeneratorSpec g;
  g.rho = rho;
  g.seed = seed;
  const auto trace = generate_routing(g, model_preset("sb8"), 3000);
  TrainingConfig cfg;
  cfg.epochs = epochs;
  cfg.seed = seed;
  const auto trained = train_predictor(trace, 0, cfg);
  const auto examples = transition_examples(trace, 0);
  const auto held_n = static_cast<std::size_t>(cfg.holdout * static_cast<double>(examples.size()));
  const std::span<const PredictorExample> held(examples.end() - static_cast<long>(held_n),
                                               examples.end());
  return {trained.validation_accuracy,
          top1_accuracy(frequency_baseline(collect_stats(trace), 0), held)};
}

}  // namespace moesim::oracle
