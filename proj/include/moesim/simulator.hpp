// Copyright (c) The moesim Authors.
// SPDX-License-Identifier: Apache-2.0

// Token-by-token inference simulation with latency and memory accounting,
// the two theorem harnesses, multi-device orchestration and sweeps.

#pragma once

#include <cstdint>
#include <optional>
#include <ostream>
#include <queue>
#include <string>
#include <vector>

#include <json.hpp>

#include "moesim/scenario.hpp"

namespace moesim {

enum class EventKind {
  TokenStart = 0,
  LayerComputeDone = 1,
  TransferDone = 2,
  ResourceTick = 3,
  VariantSwitch = 4,
  OrchestrationRound = 5,
};

struct Event {
  double time = 0;
  EventKind kind = EventKind::TokenStart;
  std::uint64_t seq = 0;
  int payload = -1;
};

/// Orders by (time, kind rank, insertion sequence).
class EventQueue {
 public:
  void push(double time, EventKind kind, int payload = -1);
  bool empty() const { return heap_.empty(); }
  std::size_t size() const { return heap_.size(); }
  const Event& top() const { return heap_.top(); }
  Event pop();

 private:
  struct Later {
    bool operator()(const Event& a, const Event& b) const;
  };
  std::priority_queue<Event, std::vector<Event>, Later> heap_;
  std::uint64_t next_seq_ = 0;
};

struct SimReport {
  std::string scenario;
  std::string method;
  std::uint64_t seed = 0;
  bool feasible = true;
  std::string infeasible_reason;
  std::string variant;        // chosen at start
  std::string final_variant;
  std::uint64_t tokens = 0;
  double budget = 0;            // bytes available to weights at start
  double deploy_footprint = 0;  // bytes the deployment check admitted
  double total_latency = 0;     // seconds
  double comp_latency = 0;
  double comm_latency = 0;
  double predictor_latency = 0;
  double adjust_latency = 0;
  double mean_token_latency = 0;
  double peak_mem = 0;  // bytes
  double avg_mem = 0;
  std::uint64_t expert_load_count = 0;
  double comm_volume = 0;  // bytes
  std::uint64_t demand_fetches = 0;
  std::uint64_t prefetches = 0;
  std::uint64_t offloaded_demands = 0;
  std::uint64_t device_hits = 0;
  double hit_rate = 0;
  std::uint64_t substitution_count = 0;
  double mean_substitution_penalty = 0;
  double throughput = 0;  // tokens per second
  double pmr = 0;         // (tokens/ms)/GB
  std::uint64_t failure_count = 0;
  std::uint64_t switch_count = 0;
  double predictor_fraction = 0;
  double adjust_fraction = 0;
  int granularity_target_min = 0;
  std::uint64_t perf_model_updates = 0;
  double perf_model_rel_error = 0;
  double predictor_accuracy = 0;  // mean validation Top-1 over transitions
};

/// (tokens/ms) / (peak GB), GB = 1e9 bytes. Throws InputDomainError when
/// the peak memory is not positive.
double compute_pmr(double throughput_tokens_per_s, double peak_mem_bytes);
double compute_pmr(const SimReport& report);

/// Artefacts derived once per scenario: model, traces, library, predictors.
struct PreparedScenario {
  Scenario scenario;
  MoeModel model;
  RoutingTrace history;
  RoutingTrace run;
  ActivationStats stats;
  CalibrationSet calibration;
  VariantLibrary library;
  std::vector<TrainedPredictor> predictors;  // [l] predicts layer l+1
  std::vector<ResourceSample> resources;
};

PreparedScenario prepare(const Scenario& s);

struct RunOptions {
  std::optional<PrefetchMode> prefetch;
  std::optional<OffloadPolicy> policy;
  std::optional<std::string> variant;  // forces the initial variant
  std::optional<std::size_t> max_tokens;
  std::ostream* event_log = nullptr;
  bool check_invariants = false;  // verify tier invariants after every event
};

SimReport simulate(const PreparedScenario& p, const RunOptions& opts = {});
SimReport run_inference(const Scenario& s, std::ostream* event_log = nullptr);

/// Bytes each method needs on the device to run `v`; the CoMoE rule falls
/// back to the offloaded footprint when the whole variant does not fit.
double deploy_footprint(const Scenario& s, const ModelVariant& v, double budget);

nlohmann::json to_json(const SimReport& r);
const std::vector<std::string>& csv_columns();
std::string csv_row(const SimReport& r);

struct Theorem1Params {
  double mu = 8e9;
  double sigma = 2e9;
  double a_m = 0.8;
  double s_e = 0.5e9;
  double beta_risk = 0.5;
  double s_m = 0.8;
  double m_other = 0.5e9;
  int experts = 1 << 20;
  std::uint64_t trials = 100000;
  std::uint64_t seed = 1;
  double confidence = 0.99;
};

struct Theorem1Result {
  int e_fixed = 0;
  double fixed_rate = 0;
  double dynamic_rate = 0;
  std::uint64_t fixed_only = 0;    // trials only the fixed strategy failed
  std::uint64_t dynamic_only = 0;  // trials only the dynamic strategy failed
  double p_value = 1;
  bool pass = false;
};

Theorem1Result theorem1_harness(const Theorem1Params& params);

struct Theorem2Params {
  std::size_t seeds = 50;
  std::uint64_t first_seed = 1;
  double required_fraction = 0.9;
};

struct Theorem2Run {
  std::uint64_t seed = 0;
  double l_none = 0;
  double l_fixed = 0;
  double l_dynamic = 0;
  double hit_fixed = 0;
  double hit_dynamic = 0;
  bool ordered = false;
  bool hit_ordered = false;
};

struct Theorem2Result {
  std::vector<Theorem2Run> runs;
  double mean_none = 0;
  double mean_fixed = 0;
  double mean_dynamic = 0;
  double ordering_fraction = 0;
  double hit_fraction = 0;
  double p_fixed_vs_none = 1;    // sign test, fixed faster than none
  double p_dynamic_vs_fixed = 1;  // sign test, dynamic faster than fixed
  bool pass = false;
};

/// Runs each seed under no, fixed and dynamic prefetching of the same
/// workload.
Theorem2Result theorem2_harness(const Scenario& base, const Theorem2Params& params);
/// Offloading deployment on a link whose bandwidth fluctuates.
Scenario theorem2_scenario();

/// One-sided tail P(X >= k) for X ~ Binomial(n, 1/2).
double binomial_upper_tail(std::uint64_t k, std::uint64_t n);

struct Strategy {
  double theta_base = 0;
  double gamma_prio = 0;
  std::string variant;
  bool operator==(const Strategy&) const = default;
};

struct OrchestrationResult {
  std::vector<std::string> devices;
  std::vector<double> heterogeneity;
  std::vector<Strategy> initial;
  std::vector<Strategy> final;
  Strategy refined;
  int rounds = 0;
  std::vector<double> max_deltas;  // per completed round
  bool converged = false;
};

OrchestrationResult orchestrate(const Scenario& base);
nlohmann::json to_json(const OrchestrationResult& r);

struct SweepAxis {
  std::string path;
  std::vector<nlohmann::json> values;
};

struct SweepSpec {
  std::vector<SweepAxis> axes;
  std::vector<std::uint64_t> seeds;
};

struct SweepRow {
  std::vector<std::string> axis_values;
  SimReport report;
};

SweepSpec sweep_from_json(const nlohmann::json& doc);
/// Cartesian product of axes times seeds on a bounded pool; rows keep
/// product order regardless of thread count.
std::vector<SweepRow> run_sweep(const nlohmann::json& scenario_doc,
                                const SweepSpec& spec, unsigned threads,
                                const std::string& base_dir = "");

}  // namespace moesim
