// Copyright (c) The moesim Authors.
// SPDX-License-Identifier: Apache-2.0

#include <algorithm>
#include <cmath>
#include <map>

#include "moesim/error.hpp"
#include "moesim/simulator.hpp"

namespace moesim {

namespace {

struct Device {
  std::string name;
  PreparedScenario prepared;
  ResourceSample base;
};

bool feasible_variant(const Device& d, const std::string& id) {
  const ModelVariant* v = d.prepared.library.find(id);
  if (!v) return false;
  const auto& s = d.prepared.scenario;
  const double budget = s.resources.a_m * d.base.gpu_mem_avail();
  return deploy_footprint(s, *v, budget) <= budget;
}

// Grid search over (theta_base, gamma_prio, variant) minimising simulated
// mean token latency; earlier grid points win ties.
Strategy local_optimum(const Device& d) {
  const auto& s = d.prepared.scenario;
  const auto& o = s.orchestration;
  Strategy best;
  double best_latency = INFINITY;
  for (const auto& v : d.prepared.library.variants) {
    if (!feasible_variant(d, v.id)) continue;
    for (double theta : o.theta_grid) {
      for (double gamma : o.gamma_grid) {
        RunOptions opts;
        OffloadPolicy pol = s.offload.policy;
        pol.theta_base = theta;
        pol.gamma_prio = gamma;
        opts.policy = pol;
        opts.variant = v.id;
        const auto r = simulate(d.prepared, opts);
        if (!r.feasible) continue;
        if (r.mean_token_latency < best_latency) {
          best_latency = r.mean_token_latency;
          best = {theta, gamma, v.id};
        }
      }
    }
  }
  if (!std::isfinite(best_latency)) {
    throw InfeasibleError("device '" + d.name + "' has no feasible strategy");
  }
  return best;
}

}  // namespace

OrchestrationResult orchestrate(const Scenario& base) {
  const auto& o = base.orchestration;
  if (o.devices.size() < 2) throw InputDomainError("orchestration needs at least two devices");
  if (o.theta_grid.empty() || o.gamma_grid.empty()) {
    throw ConfigError("orchestration grids must be non-empty");
  }

  std::vector<Device> devices;
  std::vector<DeviceProfile> profiles;
  for (const auto& spec : o.devices) {
    Scenario s = base;
    for (const auto& [field, value] : spec.overrides) set_field(s.resources.base, field, value);
    s.workload.tokens = o.eval_tokens;
    s.name = base.name + "/" + spec.name;
    Device d{spec.name, prepare(s), s.resources.base};
    profiles.push_back(profile_from_sample(spec.name, d.base));
    devices.push_back(std::move(d));
  }

  OrchestrationResult out;
  out.heterogeneity = heterogeneity(profiles).scores;
  for (const auto& d : devices) {
    out.devices.push_back(d.name);
    out.initial.push_back(local_optimum(d));
  }
  out.final = out.initial;

  std::vector<double> w(devices.size());
  double wsum = 0;
  for (std::size_t i = 0; i < w.size(); ++i) {
    w[i] = 1.0 / (out.heterogeneity[i] + 1e-6);
    wsum += w[i];
  }
  for (double& x : w) x /= wsum;

  auto refine = [&](const std::vector<Strategy>& cur) {
    Strategy s;
    std::map<std::string, double> votes;
    for (std::size_t i = 0; i < cur.size(); ++i) {
      s.theta_base += w[i] * cur[i].theta_base;
      s.gamma_prio += w[i] * cur[i].gamma_prio;
      votes[cur[i].variant] += w[i];
    }
    double best = -1;
    for (const auto& c : cur) {
      if (votes[c.variant] > best + 1e-12) {
        best = votes[c.variant];
        s.variant = c.variant;
      }
    }
    return s;
  };

  out.refined = refine(out.final);
  for (int round = 1; round <= o.rounds_max; ++round) {
    const Strategy target = refine(out.final);
    double max_delta = 0;
    for (std::size_t i = 0; i < devices.size(); ++i) {
      Strategy& s = out.final[i];
      const double dt = o.mu * (target.theta_base - s.theta_base);
      const double dg = o.mu * (target.gamma_prio - s.gamma_prio);
      s.theta_base += dt;
      s.gamma_prio += dg;
      double delta = std::max(std::abs(dt), std::abs(dg));
      if (s.variant != target.variant && feasible_variant(devices[i], target.variant)) {
        s.variant = target.variant;
        delta = std::max(delta, 1.0);
      }
      max_delta = std::max(max_delta, delta);
    }
    out.refined = target;
    out.rounds = round;
    out.max_deltas.push_back(max_delta);
    if (max_delta < o.tol) {
      out.converged = true;
      break;
    }
  }
  return out;
}

nlohmann::json to_json(const OrchestrationResult& r) {
  auto strat = [](const Strategy& s) {
    return nlohmann::json{{"theta_base", s.theta_base},
                          {"gamma_prio", s.gamma_prio},
                          {"variant", s.variant}};
  };
  nlohmann::json initial = nlohmann::json::array();
  nlohmann::json final = nlohmann::json::array();
  for (const auto& s : r.initial) initial.push_back(strat(s));
  for (const auto& s : r.final) final.push_back(strat(s));
  return {{"devices", r.devices},   {"heterogeneity", r.heterogeneity},
          {"initial", initial},     {"final", final},
          {"refined", strat(r.refined)}, {"rounds", r.rounds},
          {"max_deltas", r.max_deltas},  {"converged", r.converged}};
}

}  // namespace moesim
