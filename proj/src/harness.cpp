// Copyright (c) The moesim Authors.
// SPDX-License-Identifier: Apache-2.0

#include <algorithm>
#include <cmath>
#include <random>

#include "moesim/error.hpp"
#include "moesim/simulator.hpp"

namespace moesim {

double binomial_upper_tail(std::uint64_t k, std::uint64_t n) {
  if (k == 0) return 1.0;
  if (k > n) return 0.0;
  // Sum in log space; terms are scaled by the largest one.
  const double log_half_n = static_cast<double>(n) * std::log(0.5);
  const double lg_n1 = std::lgamma(static_cast<double>(n) + 1.0);
  std::vector<double> logs;
  logs.reserve(n - k + 1);
  for (std::uint64_t i = k; i <= n; ++i) {
    logs.push_back(lg_n1 - std::lgamma(static_cast<double>(i) + 1.0) -
                   std::lgamma(static_cast<double>(n - i) + 1.0) + log_half_n);
  }
  const double hi = *std::max_element(logs.begin(), logs.end());
  double acc = 0;
  for (double l : logs) acc += std::exp(l - hi);
  return std::min(1.0, std::exp(hi + std::log(acc)));
}

Theorem1Result theorem1_harness(const Theorem1Params& q) {
  if (q.trials == 0) throw ConfigError("theorem 1 needs at least one trial");
  if (!(q.a_m > 0 && q.a_m < 1) || !(q.s_e > 0) || q.sigma < 0 ||
      !(q.s_m >= 0 && q.s_m <= 1) || q.experts < 1) {
    throw ConfigError("invalid theorem 1 parameters");
  }
  Theorem1Result out;
  out.e_fixed = std::clamp(stable_floor(q.a_m * q.mu / q.s_e), 1, q.experts);
  std::mt19937_64 rng(q.seed);
  std::normal_distribution<double> normal(q.mu, q.sigma > 0 ? q.sigma : 1.0);
  std::uint64_t fixed_fail = 0, dyn_fail = 0;
  for (std::uint64_t t = 0; t < q.trials; ++t) {
    const double m = q.sigma > 0 ? std::max(0.0, normal(rng)) : q.mu;
    const int e_dyn = granularity_decision(q.a_m, m, q.s_e, q.beta_risk, q.s_m, q.experts);
    const bool f_fix = out.e_fixed * q.s_e + q.m_other > m;
    const bool f_dyn = e_dyn * q.s_e + q.m_other > m;
    fixed_fail += f_fix;
    dyn_fail += f_dyn;
    if (f_fix && !f_dyn) ++out.fixed_only;
    if (f_dyn && !f_fix) ++out.dynamic_only;
  }
  const auto n = static_cast<double>(q.trials);
  out.fixed_rate = static_cast<double>(fixed_fail) / n;
  out.dynamic_rate = static_cast<double>(dyn_fail) / n;
  const std::uint64_t discordant = out.fixed_only + out.dynamic_only;
  out.p_value = discordant ? binomial_upper_tail(out.fixed_only, discordant) : 1.0;
  out.pass = out.dynamic_rate <= out.fixed_rate &&
             (discordant == 0 || out.p_value < 1.0 - q.confidence);
  return out;
}

Theorem2Result theorem2_harness(const Scenario& base, const Theorem2Params& q) {
  if (q.seeds == 0) throw ConfigError("theorem 2 needs at least one seed");
  Theorem2Result out;
  std::uint64_t fix_beats_none = 0, fix_none_n = 0;
  std::uint64_t dyn_faster = 0, dyn_fix_n = 0;
  for (std::size_t i = 0; i < q.seeds; ++i) {
    Scenario s = base;
    s.seed = q.first_seed + i;
    const auto prepared = prepare(s);
    Theorem2Run run;
    run.seed = s.seed;
    RunOptions opts;
    opts.prefetch = PrefetchMode::None;
    const auto none = simulate(prepared, opts);
    opts.prefetch = PrefetchMode::Fixed;
    const auto fixed = simulate(prepared, opts);
    opts.prefetch = PrefetchMode::Dynamic;
    const auto dynamic = simulate(prepared, opts);
    if (!none.feasible || !fixed.feasible || !dynamic.feasible) {
      throw InfeasibleError("theorem 2 scenario is not deployable");
    }
    run.l_none = none.mean_token_latency;
    run.l_fixed = fixed.mean_token_latency;
    run.l_dynamic = dynamic.mean_token_latency;
    run.hit_fixed = fixed.hit_rate;
    run.hit_dynamic = dynamic.hit_rate;
    // Identical latencies (e.g. unlimited bandwidth) satisfy the ordering vacuously.
    const double tie = 1e-12 * std::max(run.l_none, 1e-300);
    const bool all_equal = std::abs(run.l_none - run.l_fixed) <= tie &&
                           std::abs(run.l_fixed - run.l_dynamic) <= tie;
    run.ordered = all_equal || (run.l_dynamic <= run.l_fixed && run.l_fixed < run.l_none);
    run.hit_ordered = run.hit_dynamic >= run.hit_fixed;
    if (run.l_fixed != run.l_none) {
      ++fix_none_n;
      fix_beats_none += run.l_fixed < run.l_none;
    }
    if (run.l_dynamic != run.l_fixed) {
      ++dyn_fix_n;
      dyn_faster += run.l_dynamic < run.l_fixed;
    }
    out.mean_none += run.l_none;
    out.mean_fixed += run.l_fixed;
    out.mean_dynamic += run.l_dynamic;
    out.ordering_fraction += run.ordered;
    out.hit_fraction += run.hit_ordered;
    out.runs.push_back(run);
  }
  const auto n = static_cast<double>(q.seeds);
  out.mean_none /= n;
  out.mean_fixed /= n;
  out.mean_dynamic /= n;
  out.ordering_fraction /= n;
  out.hit_fraction /= n;
  out.p_fixed_vs_none = fix_none_n ? binomial_upper_tail(fix_beats_none, fix_none_n) : 1.0;
  out.p_dynamic_vs_fixed = dyn_fix_n ? binomial_upper_tail(dyn_faster, dyn_fix_n) : 1.0;
  out.pass = out.ordering_fraction >= q.required_fraction &&
             out.hit_fraction >= q.required_fraction;
  return out;
}

}  // namespace moesim

namespace moesim {

Scenario theorem2_scenario() {
  Scenario s = default_scenario(Method::EOffload, "sb32");
  s.name = "theorem2_fluctuating_bw";
  s.resources.base.gpu_mem_total = 4e9;
  s.resources.base.gpu_mem_used = 0;
  s.resources.fluctuations["bw_gpu_cpu"] = fluct::RandomWalk{1.5e9, 4e9, 24e9};
  s.workload.tokens = 256;
  s.workload.history_tokens = 1000;
  s.offload.training.epochs = 5;
  s.workload.routing.rho = 0.9;
  return s;
}

}  // namespace moesim
