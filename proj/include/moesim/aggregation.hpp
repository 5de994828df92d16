// Copyright (c) The moesim Authors.
// SPDX-License-Identifier: Apache-2.0

// Expert fusion, the pre-computed variant library, variant selection and
// switching, and the runtime aggregation-granularity rule.

#pragma once

#include <functional>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "moesim/moe.hpp"

namespace moesim {

enum class FusionMode { Fixed, Adaptive };
enum class FusionScope { EncoderOnly, EncoderDecoder };

struct FusionConfig {
  std::string id;
  FusionMode mode = FusionMode::Fixed;
  double r = 1.0;        // fixed mode
  double r_base = 0.4;   // adaptive mode
  double delta_r = 0.2;  // adaptive mode
  int e_min = 1;         // adaptive mode
  double theta_act = 0.5;
  FusionScope scope = FusionScope::EncoderOnly;
  double alpha_sim = 0.5;
};

void validate(const FusionConfig& c);

/// Fixed r in {0.75, 0.5, 0.25} and adaptive (r_base, delta_r) in
/// {(0.6,0.3), (0.4,0.2), (0.2,0.1)}, light to heavy.
std::vector<FusionConfig> default_fusion_presets(
    FusionScope scope = FusionScope::EncoderOnly);

struct ExpertGroup {
  int principal = 0;
  std::vector<int> members;  // secondaries only
  std::vector<double> member_freqs;
};

struct VariantLayer {
  std::vector<Expert> experts;    // merged experts, ordered by principal slot
  std::vector<int> slot_map;      // original slot -> merged index
  std::vector<ExpertGroup> groups;
  bool fused = false;
};

struct ModelVariant {
  std::string id;
  std::vector<VariantLayer> layers;
  double mem_required = 0;   // bytes, experts plus non-expert overhead
  double perf_estimate = 1;  // surrogate, 1 for the original
  std::optional<FusionConfig> config;  // empty for the original
  std::string parent;

  int retained(int layer) const {
    return static_cast<int>(layers.at(layer).experts.size());
  }
  double expert_bytes() const;
  double layer_bytes(int layer) const;
};

struct VariantLibrary {
  std::vector<ModelVariant> variants;  // ascending mem_required

  const ModelVariant& original() const;
  const ModelVariant* find(const std::string& id) const;
};

struct SwitchPolicy {
  double lambda_switch = 0.5;
  double switch_cost = 0.04;
  double t_threshold = 8;
};

/// Top target_count slots by frequency (ties to the lower slot) plus every
/// slot with frequency >= theta_act. Returned ascending.
std::vector<int> identify_principals(std::span<const double> freqs,
                                     int target_count, double theta_act);
std::vector<int> identify_principals(const ActivationStats& stats, int layer,
                                     int target_count, double theta_act);

using SimilarityFn = std::function<double(int, int)>;

/// Each secondary joins its argmax-similarity principal; ties go to the
/// principal listed first. Groups follow the order of `principals`.
std::vector<ExpertGroup> group_experts(int experts, std::span<const int> principals,
                                       std::span<const double> freqs,
                                       const SimilarityFn& similarity);

/// Frequency-weighted mean over principal and members; the unweighted mean
/// when every frequency is zero. The result takes the principal's slot.
Expert merge_group(const ExpertGroup& group, std::span<const Expert> layer,
                   std::span<const double> freqs);

struct LayerEntropy {
  double h = 0;
  double h_norm = 0;
};

LayerEntropy layer_entropy(std::span<const double> freqs);
LayerEntropy layer_entropy(const ActivationStats& stats, int layer);

int adaptive_retention(int experts, double r_base, double delta_r, double h_norm,
                       int e_min);
int fixed_retention(int experts, double r);

/// Surrogate quality of one fused layer: retained activation mass plus
/// similarity-weighted merged mass, with similarity floored at 0.
double layer_quality(std::span<const ExpertGroup> groups,
                     std::span<const double> freqs, const SimilarityFn& similarity);

ModelVariant original_variant(const MoeModel& model);
ModelVariant fuse_model(const MoeModel& model, const ActivationStats& stats,
                        const FusionConfig& config, const CalibrationSet& cal);
VariantLibrary build_library(const MoeModel& model, const ActivationStats& stats,
                             std::span<const FusionConfig> configs,
                             const CalibrationSet& cal);

enum class SelectionMode {
  MaxPerf,    // argmax perf_estimate, ties to the smaller footprint
  MinMemory,  // smallest footprint with perf_estimate >= p_threshold
};

struct SelectionRule {
  SelectionMode mode = SelectionMode::MaxPerf;
  double p_threshold = 0.0;
};

using FootprintFn = std::function<double(const ModelVariant&)>;

/// Index of the chosen variant, or nullopt when nothing fits. The footprint
/// defaults to mem_required.
std::optional<std::size_t> select_variant(const VariantLibrary& library,
                                          double mem_available,
                                          const SelectionRule& rule = {},
                                          const FootprintFn& footprint = {});

bool should_switch(double delta_p, const SwitchPolicy& policy, double t_stable);
bool should_switch(const ModelVariant& current, const ModelVariant& candidate,
                   const SwitchPolicy& policy, double t_stable);

int granularity_decision(double a_m, double mem_avail_gpu, double s_e,
                         double beta_risk, double s_m, int experts);

/// Floor that absorbs representation error just below an integer.
int stable_floor(double x);

nlohmann::json to_json(const VariantLibrary& library);

}  // namespace moesim
