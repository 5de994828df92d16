// Copyright (c) The moesim Authors.
// SPDX-License-Identifier: Apache-2.0

#include "moesim/aggregation.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>

#include "moesim/error.hpp"

namespace moesim {

int stable_floor(double x) {
  return static_cast<int>(std::floor(x + 1e-9 * std::max(1.0, std::abs(x))));
}

void validate(const FusionConfig& c) {
  if (c.id.empty()) throw ConfigError("fusion config needs an id");
  if (c.mode == FusionMode::Fixed && !(c.r > 0 && c.r <= 1)) {
    throw ConfigError("fusion ratio r must lie in (0,1]");
  }
  if (c.mode == FusionMode::Adaptive) {
    if (!(c.r_base > 0 && c.r_base <= 1)) throw ConfigError("r_base must lie in (0,1]");
    if (!(c.delta_r >= 0 && c.delta_r <= 1)) throw ConfigError("delta_r must lie in [0,1]");
    if (c.e_min < 1) throw ConfigError("e_min must be at least 1");
  }
  if (!(c.theta_act >= 0 && c.theta_act < 1)) {
    throw ConfigError("theta_act must lie in [0,1)");
  }
  if (!(c.alpha_sim >= 0 && c.alpha_sim <= 1)) {
    throw ConfigError("alpha_sim must lie in [0,1]");
  }
}

std::vector<FusionConfig> default_fusion_presets(FusionScope scope) {
  std::vector<FusionConfig> out;
  const std::pair<const char*, double> fixed[] = {
      {"fixed_light", 0.75}, {"fixed_medium", 0.5}, {"fixed_heavy", 0.25}};
  for (const auto& [id, r] : fixed) {
    FusionConfig c;
    c.id = id;
    c.mode = FusionMode::Fixed;
    c.r = r;
    c.scope = scope;
    out.push_back(c);
  }
  const std::tuple<const char*, double, double> adaptive[] = {
      {"adaptive_light", 0.6, 0.3},
      {"adaptive_medium", 0.4, 0.2},
      {"adaptive_heavy", 0.2, 0.1}};
  for (const auto& [id, base, delta] : adaptive) {
    FusionConfig c;
    c.id = id;
    c.mode = FusionMode::Adaptive;
    c.r_base = base;
    c.delta_r = delta;
    c.e_min = 1;
    c.scope = scope;
    out.push_back(c);
  }
  return out;
}

double ModelVariant::layer_bytes(int layer) const {
  double s = 0;
  for (const auto& e : layers.at(layer).experts) s += e.size;
  return s;
}

double ModelVariant::expert_bytes() const {
  double s = 0;
  for (int l = 0; l < static_cast<int>(layers.size()); ++l) s += layer_bytes(l);
  return s;
}

const ModelVariant& VariantLibrary::original() const {
  const ModelVariant* v = find("original");
  if (!v) throw SchemaError("variant library lacks the original model");
  return *v;
}

const ModelVariant* VariantLibrary::find(const std::string& id) const {
  for (const auto& v : variants) {
    if (v.id == id) return &v;
  }
  return nullptr;
}

std::vector<int> identify_principals(std::span<const double> freqs,
                                     int target_count, double theta_act) {
  const int E = static_cast<int>(freqs.size());
  target_count = std::clamp(target_count, 1, E);
  std::vector<int> order(E);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](int a, int b) { return freqs[a] > freqs[b]; });
  std::set<int> chosen(order.begin(), order.begin() + target_count);
  for (int j = 0; j < E; ++j) {
    if (freqs[j] >= theta_act) chosen.insert(j);
  }
  return {chosen.begin(), chosen.end()};
}

std::vector<int> identify_principals(const ActivationStats& stats, int layer,
                                     int target_count, double theta_act) {
  const auto f = stats.freqs(layer);
  return identify_principals(f, target_count, theta_act);
}

std::vector<ExpertGroup> group_experts(int experts, std::span<const int> principals,
                                       std::span<const double> freqs,
                                       const SimilarityFn& similarity) {
  if (principals.empty()) throw InputDomainError("grouping needs a principal");
  std::vector<ExpertGroup> groups(principals.size());
  std::vector<bool> is_principal(experts, false);
  for (std::size_t i = 0; i < principals.size(); ++i) {
    groups[i].principal = principals[i];
    is_principal.at(principals[i]) = true;
  }
  for (int j = 0; j < experts; ++j) {
    if (is_principal[j]) continue;
    std::size_t best = 0;
    double best_sim = similarity(j, principals[0]);
    for (std::size_t i = 1; i < principals.size(); ++i) {
      const double s = similarity(j, principals[i]);
      if (s > best_sim) {
        best_sim = s;
        best = i;
      }
    }
    groups[best].members.push_back(j);
    groups[best].member_freqs.push_back(freqs.empty() ? 0.0 : freqs[j]);
  }
  return groups;
}

Expert merge_group(const ExpertGroup& group, std::span<const Expert> layer,
                   std::span<const double> freqs) {
  const Expert& principal = layer[group.principal];
  std::vector<int> all{group.principal};
  all.insert(all.end(), group.members.begin(), group.members.end());

  double mass = 0;
  for (int j : all) mass += freqs[j];
  Expert merged = principal;
  std::fill(merged.params.begin(), merged.params.end(), 0.0);
  for (int j : all) {
    const double w = mass > 0 ? freqs[j] / mass : 1.0 / static_cast<double>(all.size());
    const auto& p = layer[j].params;
    for (std::size_t d = 0; d < p.size(); ++d) merged.params[d] += w * p[d];
  }
  if (group.members.empty()) merged.params = principal.params;
  return merged;
}

LayerEntropy layer_entropy(std::span<const double> freqs) {
  LayerEntropy out;
  for (double f : freqs) {
    if (f > 0) out.h -= f * std::log(f);
  }
  const double max_h = std::log(static_cast<double>(freqs.size()));
  out.h_norm = max_h > 0 ? std::clamp(out.h / max_h, 0.0, 1.0) : 0.0;
  return out;
}

LayerEntropy layer_entropy(const ActivationStats& stats, int layer) {
  const auto f = stats.freqs(layer);
  return layer_entropy(f);
}

int adaptive_retention(int experts, double r_base, double delta_r, double h_norm,
                       int e_min) {
  const int raw = stable_floor(static_cast<double>(experts) * (r_base + delta_r * h_norm));
  return std::min(std::max(e_min, raw), experts);
}

int fixed_retention(int experts, double r) {
  return std::clamp(stable_floor(r * static_cast<double>(experts)), 1, experts);
}

double layer_quality(std::span<const ExpertGroup> groups,
                     std::span<const double> freqs, const SimilarityFn& similarity) {
  double q = 0;
  for (const auto& g : groups) {
    q += freqs[g.principal];
    for (int m : g.members) q += freqs[m] * std::max(0.0, similarity(m, g.principal));
  }
  return q;
}

ModelVariant original_variant(const MoeModel& model) {
  ModelVariant v;
  v.id = "original";
  v.parent = model.spec.name;
  for (const auto& layer : model.layers) {
    VariantLayer vl;
    vl.experts = layer;
    vl.slot_map.resize(layer.size());
    std::iota(vl.slot_map.begin(), vl.slot_map.end(), 0);
    for (const auto& e : layer) vl.groups.push_back({e.slot, {}, {}});
    v.layers.push_back(std::move(vl));
  }
  v.mem_required = v.expert_bytes() + model.spec.non_expert_bytes;
  v.perf_estimate = 1.0;
  return v;
}

ModelVariant fuse_model(const MoeModel& model, const ActivationStats& stats,
                        const FusionConfig& config, const CalibrationSet& cal) {
  validate(config);
  const int L = model.spec.moe_layers();
  const int E = model.spec.experts_per_layer;
  if (stats.layers() != L) {
    throw InputDomainError("activation stats do not cover every MoE layer");
  }
  ModelVariant v = original_variant(model);
  v.id = config.id;
  v.config = config;
  double quality = 0;
  for (int l = 0; l < L; ++l) {
    const bool in_scope = model.spec.is_encoder(l) ||
                          config.scope == FusionScope::EncoderDecoder;
    if (!in_scope) {
      quality += 1.0;
      continue;
    }
    const auto freqs = stats.freqs(l);
    const int target =
        config.mode == FusionMode::Fixed
            ? fixed_retention(E, config.r)
            : adaptive_retention(E, config.r_base, config.delta_r,
                                 layer_entropy(freqs).h_norm, config.e_min);
    const auto principals = identify_principals(freqs, target, config.theta_act);
    const auto sim = similarity_matrix(model.layers[l], config.alpha_sim, cal);
    const SimilarityFn fn = [&sim](int a, int b) { return sim[a][b]; };
    auto groups = group_experts(E, principals, freqs, fn);

    VariantLayer vl;
    vl.fused = true;
    vl.slot_map.assign(E, -1);
    for (std::size_t g = 0; g < groups.size(); ++g) {
      vl.experts.push_back(merge_group(groups[g], model.layers[l], freqs));
      vl.slot_map[groups[g].principal] = static_cast<int>(g);
      for (int m : groups[g].members) vl.slot_map[m] = static_cast<int>(g);
    }
    const double total = std::accumulate(freqs.begin(), freqs.end(), 0.0);
    quality += total > 0 ? layer_quality(groups, freqs, fn) / total : 1.0;
    vl.groups = std::move(groups);
    v.layers[l] = std::move(vl);
  }
  v.mem_required = v.expert_bytes() + model.spec.non_expert_bytes;
  v.perf_estimate = quality / static_cast<double>(L);
  return v;
}

VariantLibrary build_library(const MoeModel& model, const ActivationStats& stats,
                             std::span<const FusionConfig> configs,
                             const CalibrationSet& cal) {
  if (configs.empty()) throw ConfigError("variant library needs a fusion config");
  std::set<std::string> ids{"original"};
  for (const auto& c : configs) {
    if (!ids.insert(c.id).second) {
      throw ConfigError("duplicate fusion config id '" + c.id + "'");
    }
  }
  VariantLibrary lib;
  lib.variants.push_back(original_variant(model));
  for (const auto& c : configs) lib.variants.push_back(fuse_model(model, stats, c, cal));
  std::stable_sort(lib.variants.begin(), lib.variants.end(),
                   [](const ModelVariant& a, const ModelVariant& b) {
                     if (a.mem_required != b.mem_required) {
                       return a.mem_required < b.mem_required;
                     }
                     return a.id < b.id;
                   });
  return lib;
}

std::optional<std::size_t> select_variant(const VariantLibrary& library,
                                          double mem_available,
                                          const SelectionRule& rule,
                                          const FootprintFn& footprint) {
  if (library.variants.empty()) throw InputDomainError("variant library is empty");
  auto need = [&](const ModelVariant& v) {
    return footprint ? footprint(v) : v.mem_required;
  };
  std::optional<std::size_t> best;
  for (std::size_t i = 0; i < library.variants.size(); ++i) {
    const auto& v = library.variants[i];
    const double m = need(v);
    if (m > mem_available) continue;
    if (rule.mode == SelectionMode::MinMemory && v.perf_estimate < rule.p_threshold) {
      continue;
    }
    if (!best) {
      best = i;
      continue;
    }
    const auto& b = library.variants[*best];
    const double mb = need(b);
    bool better;
    if (rule.mode == SelectionMode::MaxPerf) {
      better = v.perf_estimate > b.perf_estimate ||
               (v.perf_estimate == b.perf_estimate && m < mb);
    } else {
      better = m < mb || (m == mb && v.perf_estimate > b.perf_estimate);
    }
    if (better) best = i;
  }
  return best;
}

bool should_switch(double delta_p, const SwitchPolicy& policy, double t_stable) {
  return delta_p > policy.lambda_switch * policy.switch_cost &&
         t_stable > policy.t_threshold;
}

bool should_switch(const ModelVariant& current, const ModelVariant& candidate,
                   const SwitchPolicy& policy, double t_stable) {
  if (current.id == candidate.id) return false;
  return should_switch(candidate.perf_estimate - current.perf_estimate, policy,
                       t_stable);
}

int granularity_decision(double a_m, double mem_avail_gpu, double s_e,
                         double beta_risk, double s_m, int experts) {
  if (!(s_e > 0)) throw InputDomainError("expert size must be positive");
  const double denom = s_e * (1.0 + beta_risk * (1.0 - s_m));
  const int raw = stable_floor(a_m * std::max(0.0, mem_avail_gpu) / denom);
  return std::min(std::max(1, raw), experts);
}

nlohmann::json to_json(const VariantLibrary& library) {
  nlohmann::json doc = nlohmann::json::array();
  for (const auto& v : library.variants) {
    nlohmann::json layers = nlohmann::json::array();
    for (const auto& l : v.layers) {
      nlohmann::json groups = nlohmann::json::array();
      std::vector<int> retained;
      for (const auto& g : l.groups) {
        retained.push_back(g.principal);
        groups.push_back({{"principal", g.principal}, {"members", g.members}});
      }
      layers.push_back({{"retained", retained}, {"groups", groups}});
    }
    doc.push_back({{"id", v.id},
                   {"layers", layers},
                   {"mem_required", v.mem_required},
                   {"perf_estimate", v.perf_estimate}});
  }
  return doc;
}

}  // namespace moesim
