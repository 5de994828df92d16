// Copyright (c) The moesim Authors.
// SPDX-License-Identifier: Apache-2.0

// Scenario documents: one JSON object with sections model, fusion, offload,
// resources, workload and orchestration. Parsing starts from the defaults
// of the chosen method, overlays the document and rejects unknown keys.

#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "moesim/aggregation.hpp"
#include "moesim/offload.hpp"
#include "moesim/predictor.hpp"
#include "moesim/resource.hpp"

namespace moesim {

enum class Method { Original, MSMoE, EOffload, CoMoE };
const char* method_name(Method m);
Method parse_method(const std::string& name);

enum class PrefetchMode { None, Fixed, Dynamic };
enum class PredictorKind { Mlp, Frequency, Oracle };
enum class OffloadScope { None, All, Encoder };

struct ModelSection {
  std::string preset;  // empty for a fully custom geometry
  MoeModelSpec spec;
  double group_spread = 0.35;
};

struct FusionSection {
  bool enabled = false;
  std::vector<FusionConfig> configs;
  SelectionMode selection = SelectionMode::MaxPerf;
  double p_threshold = 0.75;
  int calibration_probes = 8;
  int calibration_output_dim = 16;
};

struct OffloadSection {
  OffloadScope scope = OffloadScope::None;
  PrefetchMode prefetch = PrefetchMode::None;
  PredictorKind predictor = PredictorKind::Mlp;
  OffloadPolicy policy;
  bool decoder_pinned = false;
  double min_cache_fraction = 0.24;
  double cache_limit_bytes = -1;  // caps the cache tier when >= 0
  double staging_bytes = 0.2e9;
  double recency_half_life = 256;
  /// Negative selects theta_base * (1 + delta_pref), the dynamic rule at
  /// full stability and full free memory.
  double fixed_theta = -1;
  int lookahead = 1;
  TrainingConfig training;
};

struct ResourceSection {
  ResourceSample base;
  std::map<std::string, Fluctuation> fluctuations;
  double alpha_ewma = 0.3;
  std::size_t window = 16;
  double a_m = 0.49;
  double beta_risk = 0.5;
  std::string mem_metric = "gpu_mem_avail";
  std::string bw_metric = "bw_gpu_cpu";
  double significant_change = 0.15;
  bool switching = false;
  SwitchPolicy switch_policy;
  double activation_reserve = 0.8e9;
};

struct WorkloadSection {
  std::size_t tokens = 512;
  std::size_t history_tokens = 2000;
  RoutingGeneratorSpec routing;
  std::string trace_file;  // JSONL; history first, then the run
  double dense_flops = 5e8;      // per MoE block
  double flops_per_byte = 1.0;   // expert FLOPs per expert byte per token
  double util_penalty = 0.5;
  double predictor_cost = 2e-6;  // seconds per predictor evaluation
  double adjust_cost = 1e-6;     // seconds per resource/decision tick
  double switch_latency = 2e-3;  // seconds per variant switch
  bool perf_model = true;
  double perf_learning_rate = 1e-3;
};

struct DeviceSpec {
  std::string name;
  std::map<std::string, double> overrides;  // ResourceSample fields
};

struct OrchestrationSection {
  std::vector<DeviceSpec> devices;
  int rounds_max = 5;
  double tol = 1e-3;
  double mu = 0.5;
  std::vector<double> theta_grid = {0.1, 0.2, 0.3, 0.4};
  std::vector<double> gamma_grid = {0.2, 0.4, 0.6, 0.8};
  std::size_t eval_tokens = 64;
};

struct Scenario {
  std::string name = "scenario";
  Method method = Method::CoMoE;
  std::uint64_t seed = 0;
  ModelSection model;
  FusionSection fusion;
  OffloadSection offload;
  ResourceSection resources;
  WorkloadSection workload;
  OrchestrationSection orchestration;
  std::string base_dir;  // resolves relative trace paths; not serialized
};

/// Defaults for a method on a model preset.
Scenario default_scenario(Method method, const std::string& preset = "sb32");

/// Throws ConfigError naming the offending key.
Scenario scenario_from_json(const nlohmann::json& doc);
nlohmann::json to_json(const Scenario& s);

/// Overlays `key=value` on the document. The value parses as JSON and falls
/// back to a string; intermediate objects are created as needed.
void apply_override(nlohmann::json& doc, const std::string& assignment);
void set_path(nlohmann::json& doc, const std::string& dotted,
              const nlohmann::json& value);

Scenario load_scenario(const std::string& path,
                       const std::vector<std::string>& overrides = {});
nlohmann::json parse_json_file(const std::string& path);

ResourceTraceSpec trace_spec(const Scenario& s);
void validate(const Scenario& s);

}  // namespace moesim
