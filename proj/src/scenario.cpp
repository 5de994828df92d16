// Copyright (c) The moesim Authors.
// SPDX-License-Identifier: Apache-2.0

#include "moesim/scenario.hpp"

#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

#include "moesim/error.hpp"

namespace moesim {

using nlohmann::json;

namespace {

template <class E>
struct EnumName {
  E value;
  const char* name;
};

constexpr EnumName<Method> kMethods[] = {{Method::Original, "original"},
                                         {Method::MSMoE, "msmoe"},
                                         {Method::EOffload, "eoffload"},
                                         {Method::CoMoE, "comoe"}};
constexpr EnumName<PrefetchMode> kPrefetch[] = {{PrefetchMode::None, "none"},
                                                {PrefetchMode::Fixed, "fixed"},
                                                {PrefetchMode::Dynamic, "dynamic"}};
constexpr EnumName<PredictorKind> kPredictors[] = {{PredictorKind::Mlp, "mlp"},
                                                   {PredictorKind::Frequency, "frequency"},
                                                   {PredictorKind::Oracle, "oracle"}};
constexpr EnumName<OffloadScope> kScopes[] = {{OffloadScope::None, "none"},
                                              {OffloadScope::All, "all"},
                                              {OffloadScope::Encoder, "encoder"}};
constexpr EnumName<FusionScope> kFusionScopes[] = {
    {FusionScope::EncoderOnly, "encoder"}, {FusionScope::EncoderDecoder, "encoder_decoder"}};
constexpr EnumName<FusionMode> kFusionModes[] = {{FusionMode::Fixed, "fixed"},
                                                 {FusionMode::Adaptive, "adaptive"}};
constexpr EnumName<SelectionMode> kSelections[] = {{SelectionMode::MaxPerf, "max_perf"},
                                                   {SelectionMode::MinMemory, "min_memory"}};
constexpr EnumName<ThresholdMode> kThresholds[] = {
    {ThresholdMode::ResourceAware, "resource_aware"},
    {ThresholdMode::StorageFraction, "storage_fraction"}};

template <class E, std::size_t N>
const char* to_name(const EnumName<E> (&table)[N], E v) {
  for (const auto& e : table) {
    if (e.value == v) return e.name;
  }
  return "?";
}

template <class E, std::size_t N>
E from_name(const EnumName<E> (&table)[N], const std::string& s,
            const std::string& path) {
  for (const auto& e : table) {
    if (s == e.name) return e.value;
  }
  std::string allowed;
  for (const auto& e : table) allowed += std::string(allowed.empty() ? "" : ", ") + e.name;
  throw ConfigError(path + ": '" + s + "' is not one of {" + allowed + "}");
}

// Reads an object while recording which keys were consumed, so leftovers
// can be reported as unknown.
class Reader {
 public:
  Reader(const json* j, std::string path) : j_(j), path_(std::move(path)) {
    if (j_ && !j_->is_object()) throw ConfigError(path_ + ": expected an object");
  }

  bool has(const char* key) const { return j_ && j_->contains(key); }

  template <class T>
  void get(const char* key, T& out) {
    if (!has(key)) return;
    used_.insert(key);
    try {
      out = j_->at(key).get<T>();
    } catch (const json::exception&) {
      throw ConfigError(where(key) + ": wrong value type");
    }
  }

  template <class E, std::size_t N>
  void get_enum(const char* key, const EnumName<E> (&table)[N], E& out) {
    if (!has(key)) return;
    std::string s;
    get(key, s);
    out = from_name(table, s, where(key));
  }

  const json* raw(const char* key) {
    if (!has(key)) return nullptr;
    used_.insert(key);
    return &j_->at(key);
  }

  Reader child(const char* key) { return Reader(raw(key), where(key)); }

  std::string where(const std::string& key) const {
    return path_.empty() ? key : path_ + "." + key;
  }

  void finish() const {
    if (!j_) return;
    for (const auto& [key, value] : j_->items()) {
      (void)value;
      if (!used_.contains(key)) throw ConfigError("unknown config key '" + where(key) + "'");
    }
  }

 private:
  const json* j_;
  std::string path_;
  std::set<std::string> used_;
};

json fusion_config_json(const FusionConfig& c) {
  return {{"id", c.id},
          {"mode", to_name(kFusionModes, c.mode)},
          {"r", c.r},
          {"r_base", c.r_base},
          {"delta_r", c.delta_r},
          {"e_min", c.e_min},
          {"theta_act", c.theta_act},
          {"scope", to_name(kFusionScopes, c.scope)},
          {"alpha_sim", c.alpha_sim}};
}

FusionConfig fusion_config_from(const json& j, const std::string& path) {
  FusionConfig c;
  Reader r(&j, path);
  r.get("id", c.id);
  r.get_enum("mode", kFusionModes, c.mode);
  r.get("r", c.r);
  r.get("r_base", c.r_base);
  r.get("delta_r", c.delta_r);
  r.get("e_min", c.e_min);
  r.get("theta_act", c.theta_act);
  r.get_enum("scope", kFusionScopes, c.scope);
  r.get("alpha_sim", c.alpha_sim);
  r.finish();
  return c;
}

json fluctuation_json(const Fluctuation& f) {
  return std::visit(
      [](const auto& m) -> json {
        using M = std::decay_t<decltype(m)>;
        if constexpr (std::is_same_v<M, fluct::Constant>) {
          return {{"type", "constant"}};
        } else if constexpr (std::is_same_v<M, fluct::Sinusoid>) {
          return {{"type", "sinusoid"}, {"amplitude", m.amplitude}, {"period", m.period}};
        } else if constexpr (std::is_same_v<M, fluct::RandomWalk>) {
          return {{"type", "random_walk"},
                  {"step_stddev", m.step_stddev},
                  {"lower", m.lower},
                  {"upper", m.upper}};
        } else {
          return {{"type", "step"}, {"time", m.time}, {"new_value", m.new_value}};
        }
      },
      f);
}

Fluctuation fluctuation_from(const json& j, const std::string& path) {
  Reader r(&j, path);
  std::string type;
  r.get("type", type);
  Fluctuation out;
  if (type == "constant") {
    out = fluct::Constant{};
  } else if (type == "sinusoid") {
    fluct::Sinusoid m;
    r.get("amplitude", m.amplitude);
    r.get("period", m.period);
    out = m;
  } else if (type == "random_walk") {
    fluct::RandomWalk m;
    r.get("step_stddev", m.step_stddev);
    r.get("lower", m.lower);
    r.get("upper", m.upper);
    out = m;
  } else if (type == "step") {
    fluct::StepChange m;
    r.get("time", m.time);
    r.get("new_value", m.new_value);
    out = m;
  } else {
    throw ConfigError(path + ".type: unknown fluctuation model '" + type + "'");
  }
  r.finish();
  return out;
}

json sample_json(const ResourceSample& s) {
  json j = json::object();
  for (const auto& name : resource_field_names()) {
    if (name != "time") j[name] = get_field(s, name);
  }
  return j;
}

void read_sample(Reader r, ResourceSample& s) {
  for (const auto& name : resource_field_names()) {
    if (name == "time") continue;
    double v = get_field(s, name);
    r.get(name.c_str(), v);
    set_field(s, name, v);
  }
  r.finish();
}

void read_model(Reader r, ModelSection& m) {
  std::string preset = m.preset;
  r.get("preset", preset);
  if (preset != m.preset) {
    m.preset = preset;
    if (!preset.empty()) m.spec = model_preset(preset);
  }
  auto& s = m.spec;
  r.get("name", s.name);
  r.get("total_layers", s.total_layers);
  r.get("moe_layer_indices", s.moe_layer_indices);
  r.get("encoder_moe_layers", s.encoder_moe_layers);
  r.get("decoder_moe_layers", s.decoder_moe_layers);
  r.get("experts_per_layer", s.experts_per_layer);
  r.get("expert_param_dim", s.expert_param_dim);
  r.get("expert_size", s.expert_size);
  r.get("top_k", s.top_k);
  r.get("non_expert_bytes", s.non_expert_bytes);
  r.get("group_spread", m.group_spread);
  if (const json* ov = r.raw("size_overrides")) {
    if (!ov->is_array()) throw ConfigError(r.where("size_overrides") + ": expected an array");
    s.size_overrides.clear();
    for (const auto& e : *ov) {
      Reader er(&e, r.where("size_overrides[]"));
      int layer = 0, slot = 0;
      double bytes = 0;
      er.get("layer", layer);
      er.get("slot", slot);
      er.get("bytes", bytes);
      er.finish();
      s.size_overrides[{layer, slot}] = bytes;
    }
  }
  r.finish();
}

json model_json(const ModelSection& m) {
  json j = json::object();
  j["preset"] = m.preset;
  const MoeModelSpec ref = m.preset.empty() ? MoeModelSpec{} : model_preset(m.preset);
  const auto& s = m.spec;
  // Only fields that differ from the preset, so a preset override stays
  // meaningful on a normalized document.
  if (m.preset.empty() || s.name != ref.name) j["name"] = s.name;
  if (m.preset.empty() || s.total_layers != ref.total_layers) j["total_layers"] = s.total_layers;
  if (m.preset.empty() || s.moe_layer_indices != ref.moe_layer_indices) {
    j["moe_layer_indices"] = s.moe_layer_indices;
  }
  if (m.preset.empty() || s.encoder_moe_layers != ref.encoder_moe_layers) {
    j["encoder_moe_layers"] = s.encoder_moe_layers;
  }
  if (m.preset.empty() || s.decoder_moe_layers != ref.decoder_moe_layers) {
    j["decoder_moe_layers"] = s.decoder_moe_layers;
  }
  if (m.preset.empty() || s.experts_per_layer != ref.experts_per_layer) {
    j["experts_per_layer"] = s.experts_per_layer;
  }
  if (m.preset.empty() || s.expert_param_dim != ref.expert_param_dim) {
    j["expert_param_dim"] = s.expert_param_dim;
  }
  if (m.preset.empty() || s.expert_size != ref.expert_size) j["expert_size"] = s.expert_size;
  if (m.preset.empty() || s.top_k != ref.top_k) j["top_k"] = s.top_k;
  if (m.preset.empty() || s.non_expert_bytes != ref.non_expert_bytes) {
    j["non_expert_bytes"] = s.non_expert_bytes;
  }
  if (!s.size_overrides.empty()) {
    json ov = json::array();
    for (const auto& [key, bytes] : s.size_overrides) {
      ov.push_back({{"layer", key.first}, {"slot", key.second}, {"bytes", bytes}});
    }
    j["size_overrides"] = ov;
  }
  j["group_spread"] = m.group_spread;
  return j;
}

void read_policy(Reader r, OffloadPolicy& p) {
  r.get("gamma_prio", p.gamma_prio);
  r.get("theta_base", p.theta_base);
  r.get("delta_pref", p.delta_pref);
  r.get("gamma_cachethr", p.gamma_cachethr);
  r.get("delta_evict", p.delta_evict);
  r.get("lambda_evict", p.lambda_evict);
  r.get_enum("threshold_mode", kThresholds, p.threshold_mode);
  r.get("conservative_threshold", p.conservative_threshold);
  r.get("substitution_sim_min", p.substitution_sim_min);
  r.get("priority_quantile", p.priority_quantile);
  r.get("substitution", p.substitution);
  r.finish();
}

}  // namespace

const char* method_name(Method m) { return to_name(kMethods, m); }

Method parse_method(const std::string& name) { return from_name(kMethods, name, "method"); }

Scenario default_scenario(Method method, const std::string& preset) {
  Scenario s;
  s.method = method;
  s.name = std::string(method_name(method)) + "_" + preset;
  s.model.preset = preset;
  s.model.spec = model_preset(preset);

  auto& b = s.resources.base;
  b.gpu_compute = 1e12;
  b.cpu_compute = 2e11;
  b.gpu_util = 0.3;
  b.cpu_util = 0.3;
  b.gpu_mem_total = 8e9;
  b.cpu_mem_total = 32e9;
  b.gpu_mem_used = 0;
  b.cpu_mem_used = 4e9;
  b.bw_gpu_cpu = 16e9;
  b.bw_net = 1.25e9;
  b.lat_gpu_cpu = 1e-5;
  b.lat_net = 1e-3;

  s.workload.routing.skew = {0.6, 0.9, 0.7, 1.0, 0.8, 0.5};

  switch (method) {
    case Method::Original:
      break;
    case Method::MSMoE:
      s.fusion.enabled = true;
      s.fusion.configs = default_fusion_presets(FusionScope::EncoderDecoder);
      s.fusion.selection = SelectionMode::MaxPerf;
      break;
    case Method::EOffload:
      s.offload.scope = OffloadScope::All;
      s.offload.prefetch = PrefetchMode::Fixed;
      s.offload.policy.substitution = false;
      break;
    case Method::CoMoE:
      s.fusion.enabled = true;
      s.fusion.configs = default_fusion_presets(FusionScope::EncoderDecoder);
      s.fusion.selection = SelectionMode::MinMemory;
      s.offload.scope = OffloadScope::Encoder;
      s.offload.prefetch = PrefetchMode::Dynamic;
      s.offload.decoder_pinned = true;
      s.resources.switching = true;
      break;
  }
  return s;
}

Scenario scenario_from_json(const json& doc) {
  if (!doc.is_object()) throw ConfigError("scenario must be a JSON object");
  Reader top(&doc, "");
  std::string method = "comoe";
  top.get("method", method);
  std::string preset = "sb32";
  if (doc.contains("model") && doc["model"].is_object() && doc["model"].contains("preset")) {
    if (doc["model"]["preset"].is_string()) preset = doc["model"]["preset"].get<std::string>();
  }
  Scenario s = default_scenario(parse_method(method), preset.empty() ? "sb32" : preset);
  if (preset.empty()) s.model.preset.clear();
  top.get("name", s.name);
  top.get("seed", s.seed);

  read_model(top.child("model"), s.model);

  {
    Reader r = top.child("fusion");
    r.get("enabled", s.fusion.enabled);
    r.get_enum("selection", kSelections, s.fusion.selection);
    r.get("p_threshold", s.fusion.p_threshold);
    r.get("calibration_probes", s.fusion.calibration_probes);
    r.get("calibration_output_dim", s.fusion.calibration_output_dim);
    if (const json* cfgs = r.raw("configs")) {
      if (cfgs->is_string()) {
        const auto name = cfgs->get<std::string>();
        if (name == "default_encoder") {
          s.fusion.configs = default_fusion_presets(FusionScope::EncoderOnly);
        } else if (name == "default_encoder_decoder") {
          s.fusion.configs = default_fusion_presets(FusionScope::EncoderDecoder);
        } else {
          throw ConfigError("fusion.configs: unknown preset set '" + name + "'");
        }
      } else if (cfgs->is_array()) {
        s.fusion.configs.clear();
        for (const auto& c : *cfgs) {
          s.fusion.configs.push_back(fusion_config_from(c, "fusion.configs[]"));
        }
      } else {
        throw ConfigError("fusion.configs: expected an array or preset name");
      }
    }
    r.finish();
  }

  {
    Reader r = top.child("offload");
    r.get_enum("scope", kScopes, s.offload.scope);
    r.get_enum("prefetch", kPrefetch, s.offload.prefetch);
    r.get_enum("predictor", kPredictors, s.offload.predictor);
    r.get("decoder_pinned", s.offload.decoder_pinned);
    r.get("min_cache_fraction", s.offload.min_cache_fraction);
    r.get("cache_limit_bytes", s.offload.cache_limit_bytes);
    r.get("staging_bytes", s.offload.staging_bytes);
    r.get("recency_half_life", s.offload.recency_half_life);
    r.get("fixed_theta", s.offload.fixed_theta);
    r.get("lookahead", s.offload.lookahead);
    read_policy(r.child("policy"), s.offload.policy);
    {
      Reader t = r.child("training");
      t.get("hidden_dim", s.offload.training.hidden_dim);
      t.get("learning_rate", s.offload.training.learning_rate);
      t.get("epochs", s.offload.training.epochs);
      t.get("holdout", s.offload.training.holdout);
      t.finish();
    }
    r.finish();
  }
  {
    Reader r = top.child("resources");
    read_sample(r.child("base"), s.resources.base);
    if (const json* f = r.raw("fluctuations")) {
      if (!f->is_object()) throw ConfigError("resources.fluctuations: expected an object");
      s.resources.fluctuations.clear();
      for (const auto& [metric, model] : f->items()) {
        s.resources.fluctuations[metric] =
            fluctuation_from(model, "resources.fluctuations." + metric);
      }
    }
    r.get("alpha_ewma", s.resources.alpha_ewma);
    r.get("window", s.resources.window);
    r.get("a_m", s.resources.a_m);
    r.get("beta_risk", s.resources.beta_risk);
    r.get("mem_metric", s.resources.mem_metric);
    r.get("bw_metric", s.resources.bw_metric);
    r.get("significant_change", s.resources.significant_change);
    r.get("switching", s.resources.switching);
    r.get("activation_reserve", s.resources.activation_reserve);
    {
      Reader sw = r.child("switch_policy");
      sw.get("lambda_switch", s.resources.switch_policy.lambda_switch);
      sw.get("switch_cost", s.resources.switch_policy.switch_cost);
      sw.get("t_threshold", s.resources.switch_policy.t_threshold);
      sw.finish();
    }
    r.finish();
  }

  {
    Reader r = top.child("workload");
    auto& w = s.workload;
    r.get("tokens", w.tokens);
    r.get("history_tokens", w.history_tokens);
    r.get("trace_file", w.trace_file);
    r.get("sequence_length", w.routing.sequence_length);
    r.get("dense_flops", w.dense_flops);
    r.get("flops_per_byte", w.flops_per_byte);
    r.get("util_penalty", w.util_penalty);
    r.get("predictor_cost", w.predictor_cost);
    r.get("adjust_cost", w.adjust_cost);
    r.get("switch_latency", w.switch_latency);
    r.get("perf_model", w.perf_model);
    r.get("perf_learning_rate", w.perf_learning_rate);
    {
      Reader rt = r.child("routing");
      rt.get("skew", w.routing.skew);
      rt.get("rho", w.routing.rho);
      rt.get("embedding_dim", w.routing.embedding_dim);
      rt.get("context_dim", w.routing.context_dim);
      rt.finish();
    }
    r.finish();
  }

  {
    Reader r = top.child("orchestration");
    auto& o = s.orchestration;
    if (const json* devs = r.raw("devices")) {
      if (!devs->is_array()) throw ConfigError("orchestration.devices: expected an array");
      o.devices.clear();
      for (const auto& d : *devs) {
        Reader dr(&d, "orchestration.devices[]");
        DeviceSpec spec;
        dr.get("name", spec.name);
        if (const json* ov = dr.raw("overrides")) {
          if (!ov->is_object()) throw ConfigError("device overrides must be an object");
          for (const auto& [k, v] : ov->items()) {
            if (!is_resource_field(k) || k == "time") {
              throw ConfigError("unknown config key 'orchestration.devices[].overrides." +
                                k + "'");
            }
            if (!v.is_number()) throw ConfigError("device override '" + k + "' must be numeric");
            spec.overrides[k] = v.get<double>();
          }
        }
        dr.finish();
        o.devices.push_back(std::move(spec));
      }
    }
    r.get("rounds_max", o.rounds_max);
    r.get("tol", o.tol);
    r.get("mu", o.mu);
    r.get("theta_grid", o.theta_grid);
    r.get("gamma_grid", o.gamma_grid);
    r.get("eval_tokens", o.eval_tokens);
    r.finish();
  }
  top.finish();
  validate(s);
  return s;
}

json to_json(const Scenario& s) {
  json j;
  j["name"] = s.name;
  j["method"] = method_name(s.method);
  j["seed"] = s.seed;
  j["model"] = model_json(s.model);

  json configs = json::array();
  for (const auto& c : s.fusion.configs) configs.push_back(fusion_config_json(c));
  j["fusion"] = {{"enabled", s.fusion.enabled},
                 {"selection", to_name(kSelections, s.fusion.selection)},
                 {"p_threshold", s.fusion.p_threshold},
                 {"calibration_probes", s.fusion.calibration_probes},
                 {"calibration_output_dim", s.fusion.calibration_output_dim},
                 {"configs", configs}};

  const auto& o = s.offload;
  const auto& p = o.policy;
  j["offload"] = {
      {"scope", to_name(kScopes, o.scope)},
      {"prefetch", to_name(kPrefetch, o.prefetch)},
      {"predictor", to_name(kPredictors, o.predictor)},
      {"decoder_pinned", o.decoder_pinned},
      {"min_cache_fraction", o.min_cache_fraction},
      {"cache_limit_bytes", o.cache_limit_bytes},
      {"staging_bytes", o.staging_bytes},
      {"recency_half_life", o.recency_half_life},
      {"fixed_theta", o.fixed_theta},
      {"lookahead", o.lookahead},
      {"policy",
       {{"gamma_prio", p.gamma_prio},
        {"theta_base", p.theta_base},
        {"delta_pref", p.delta_pref},
        {"gamma_cachethr", p.gamma_cachethr},
        {"delta_evict", p.delta_evict},
        {"lambda_evict", p.lambda_evict},
        {"threshold_mode", to_name(kThresholds, p.threshold_mode)},
        {"conservative_threshold", p.conservative_threshold},
        {"substitution_sim_min", p.substitution_sim_min},
        {"priority_quantile", p.priority_quantile},
        {"substitution", p.substitution}}},
      {"training",
       {{"hidden_dim", o.training.hidden_dim},
        {"learning_rate", o.training.learning_rate},
        {"epochs", o.training.epochs},
        {"holdout", o.training.holdout}}}};

  const auto& r = s.resources;
  json fl = json::object();
  for (const auto& [metric, model] : r.fluctuations) fl[metric] = fluctuation_json(model);
  j["resources"] = {{"base", sample_json(r.base)},
                    {"fluctuations", fl},
                    {"alpha_ewma", r.alpha_ewma},
                    {"window", r.window},
                    {"a_m", r.a_m},
                    {"beta_risk", r.beta_risk},
                    {"mem_metric", r.mem_metric},
                    {"bw_metric", r.bw_metric},
                    {"significant_change", r.significant_change},
                    {"switching", r.switching},
                    {"activation_reserve", r.activation_reserve},
                    {"switch_policy",
                     {{"lambda_switch", r.switch_policy.lambda_switch},
                      {"switch_cost", r.switch_policy.switch_cost},
                      {"t_threshold", r.switch_policy.t_threshold}}}};

  const auto& w = s.workload;
  j["workload"] = {{"tokens", w.tokens},
                   {"history_tokens", w.history_tokens},
                   {"trace_file", w.trace_file},
                   {"sequence_length", w.routing.sequence_length},
                   {"dense_flops", w.dense_flops},
                   {"flops_per_byte", w.flops_per_byte},
                   {"util_penalty", w.util_penalty},
                   {"predictor_cost", w.predictor_cost},
                   {"adjust_cost", w.adjust_cost},
                   {"switch_latency", w.switch_latency},
                   {"perf_model", w.perf_model},
                   {"perf_learning_rate", w.perf_learning_rate},
                   {"routing",
                    {{"skew", w.routing.skew},
                     {"rho", w.routing.rho},
                     {"embedding_dim", w.routing.embedding_dim},
                     {"context_dim", w.routing.context_dim}}}};

  json devices = json::array();
  for (const auto& d : s.orchestration.devices) {
    devices.push_back({{"name", d.name}, {"overrides", d.overrides}});
  }
  const auto& oc = s.orchestration;
  j["orchestration"] = {{"devices", devices},         {"rounds_max", oc.rounds_max},
                        {"tol", oc.tol},               {"mu", oc.mu},
                        {"theta_grid", oc.theta_grid}, {"gamma_grid", oc.gamma_grid},
                        {"eval_tokens", oc.eval_tokens}};
  return j;
}

void set_path(json& doc, const std::string& dotted, const json& value) {
  if (dotted.empty()) throw ConfigError("override needs a key");
  json* cur = &doc;
  std::size_t start = 0;
  while (true) {
    const auto dot = dotted.find('.', start);
    const std::string part = dotted.substr(start, dot - start);
    if (part.empty()) throw ConfigError("malformed override key '" + dotted + "'");
    if (!cur->is_object()) {
      if (!cur->is_null()) throw ConfigError("override path '" + dotted + "' crosses a value");
      *cur = json::object();
    }
    if (dot == std::string::npos) {
      (*cur)[part] = value;
      return;
    }
    cur = &(*cur)[part];
    start = dot + 1;
  }
}

void apply_override(json& doc, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos) {
    throw ConfigError("override '" + assignment + "' is not key=value");
  }
  const std::string key = assignment.substr(0, eq);
  const std::string text = assignment.substr(eq + 1);
  json value = json::parse(text, nullptr, false);
  if (value.is_discarded()) value = text;
  set_path(doc, key, value);
}

json parse_json_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot open '" + path + "'");
  std::stringstream buf;
  buf << in.rdbuf();
  json doc = json::parse(buf.str(), nullptr, false);
  if (doc.is_discarded()) throw ConfigError("'" + path + "' is not valid JSON");
  return doc;
}

Scenario load_scenario(const std::string& path, const std::vector<std::string>& overrides) {
  json doc = parse_json_file(path);
  for (const auto& o : overrides) apply_override(doc, o);
  Scenario s = scenario_from_json(doc);
  s.base_dir = std::filesystem::path(path).parent_path().string();
  return s;
}

ResourceTraceSpec trace_spec(const Scenario& s) {
  ResourceTraceSpec spec;
  spec.base = s.resources.base;
  spec.models = s.resources.fluctuations;
  spec.seed = s.seed * 0x9e3779b97f4a7c15ULL + 1;
  spec.length = s.workload.tokens;
  return spec;
}

void validate(const Scenario& s) {
  validate(s.model.spec);
  validate(s.resources.base);
  validate(s.offload.policy);
  for (const auto& c : s.fusion.configs) validate(c);
  if (s.fusion.enabled && s.fusion.configs.empty()) {
    throw ConfigError("fusion is enabled without fusion configs");
  }
  const auto& r = s.resources;
  if (!(r.alpha_ewma > 0 && r.alpha_ewma <= 1)) throw ConfigError("resources.alpha_ewma must lie in (0,1]");
  if (r.window == 0) throw ConfigError("resources.window must be positive");
  if (!(r.a_m > 0 && r.a_m < 1)) throw ConfigError("resources.a_m must lie in (0,1)");
  if (r.beta_risk < 0) throw ConfigError("resources.beta_risk must be nonnegative");
  if (r.mem_metric != "gpu_mem_avail" && !is_resource_field(r.mem_metric)) {
    throw ConfigError("resources.mem_metric: unknown metric '" + r.mem_metric + "'");
  }
  if (!is_resource_field(r.bw_metric)) {
    throw ConfigError("resources.bw_metric: unknown metric '" + r.bw_metric + "'");
  }
  if (r.switch_policy.lambda_switch < 0 || r.switch_policy.switch_cost < 0 ||
      r.switch_policy.t_threshold < 0) {
    throw ConfigError("resources.switch_policy values must be nonnegative");
  }
  if (r.activation_reserve < 0) throw ConfigError("resources.activation_reserve must be nonnegative");
  for (const auto& [metric, model] : r.fluctuations) {
    if (!is_resource_field(metric) || metric == "time") {
      throw ConfigError("resources.fluctuations: unknown metric '" + metric + "'");
    }
    (void)model;
  }
  const auto& w = s.workload;
  if (w.tokens == 0) throw ConfigError("workload.tokens must be positive");
  if (w.routing.sequence_length <= 0) throw ConfigError("workload.sequence_length must be positive");
  if (w.dense_flops < 0 || w.flops_per_byte < 0 || w.util_penalty < 0 ||
      w.predictor_cost < 0 || w.adjust_cost < 0 || w.switch_latency < 0) {
    throw ConfigError("workload cost constants must be nonnegative");
  }
  const auto& o = s.offload;
  if (!(o.min_cache_fraction >= 0 && o.min_cache_fraction <= 1)) {
    throw ConfigError("offload.min_cache_fraction must lie in [0,1]");
  }
  if (o.staging_bytes < 0) throw ConfigError("offload.staging_bytes must be nonnegative");
  if (o.lookahead < 1) throw ConfigError("offload.lookahead must be at least 1");
  if (o.prefetch != PrefetchMode::None && o.scope != OffloadScope::None &&
      o.predictor == PredictorKind::Mlp && w.history_tokens < 10) {
    throw ConfigError("workload.history_tokens too small to train the predictor");
  }
  if (s.orchestration.mu <= 0 || s.orchestration.mu > 1) {
    throw ConfigError("orchestration.mu must lie in (0,1]");
  }
  if (s.orchestration.rounds_max < 0 || s.orchestration.tol < 0) {
    throw ConfigError("orchestration.rounds_max and tol must be nonnegative");
  }
}

}  // namespace moesim
