// Copyright (c) The moesim Authors.
// SPDX-License-Identifier: Apache-2.0

#include "moesim/simulator.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>

#include "moesim/error.hpp"
#include "moesim/perfmodel.hpp"

namespace moesim {

bool EventQueue::Later::operator()(const Event& a, const Event& b) const {
  if (a.time != b.time) return a.time > b.time;
  if (a.kind != b.kind) return static_cast<int>(a.kind) > static_cast<int>(b.kind);
  return a.seq > b.seq;
}

void EventQueue::push(double time, EventKind kind, int payload) {
  heap_.push(Event{time, kind, next_seq_++, payload});
}

Event EventQueue::pop() {
  Event e = heap_.top();
  heap_.pop();
  return e;
}

double compute_pmr(double throughput_tokens_per_s, double peak_mem_bytes) {
  if (!(peak_mem_bytes > 0)) throw InputDomainError("PMR needs positive memory");
  return (throughput_tokens_per_s / 1e3) / (peak_mem_bytes / 1e9);
}

double compute_pmr(const SimReport& r) { return compute_pmr(r.throughput, r.peak_mem); }

namespace {

constexpr std::uint64_t kTraceSalt = 0x5851f42d4c957f2dULL;

double mem_metric_value(const ResourceSample& s, const std::string& metric) {
  return metric == "gpu_mem_avail" ? s.gpu_mem_avail() : get_field(s, metric);
}

bool layer_offloaded(const Scenario& s, int layer) {
  switch (s.offload.scope) {
    case OffloadScope::None: return false;
    case OffloadScope::All: return true;
    case OffloadScope::Encoder: return s.model.spec.is_encoder(layer);
  }
  return false;
}

struct Footprint {
  bool all_resident = true;
  double offloadable = 0;  // bytes in offloaded layers
  double resident = 0;     // expert bytes that never leave the device
  double working_set = 0;  // demand-fetch slots in the workspace
  double required = 0;     // bytes admitted by the deployment check
};

Footprint footprint_of(const Scenario& s, const ModelVariant& v, double budget) {
  Footprint f;
  f.required = v.mem_required;
  if (s.offload.scope == OffloadScope::None || v.mem_required <= budget) return f;
  double max_size = 0;
  for (int l = 0; l < static_cast<int>(v.layers.size()); ++l) {
    if (layer_offloaded(s, l)) {
      f.offloadable += v.layer_bytes(l);
      for (const auto& e : v.layers[l].experts) max_size = std::max(max_size, e.size);
    } else {
      f.resident += v.layer_bytes(l);
    }
  }
  if (f.offloadable == 0) return f;
  f.all_resident = false;
  f.working_set = s.model.spec.top_k * max_size;
  f.required = s.model.spec.non_expert_bytes + s.offload.staging_bytes + f.resident +
               f.working_set + s.offload.min_cache_fraction * f.offloadable;
  return f;
}

std::string expert_label(int layer, int idx) {
  return "L" + std::to_string(layer) + ":E" + std::to_string(idx);
}

}  // namespace

double deploy_footprint(const Scenario& s, const ModelVariant& v, double budget) {
  return footprint_of(s, v, budget).required;
}

PreparedScenario prepare(const Scenario& s) {
  validate(s);
  PreparedScenario p;
  p.scenario = s;
  p.model = synthesize_model(s.model.spec, s.seed, s.model.group_spread);

  RoutingTrace full;
  const std::size_t need = s.workload.history_tokens + s.workload.tokens;
  if (!s.workload.trace_file.empty()) {
    std::string path = s.workload.trace_file;
    if (!s.base_dir.empty() && path.front() != '/') path = s.base_dir + "/" + path;
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open routing trace '" + path + "'");
    full = read_trace_jsonl(in, s.model.spec.experts_per_layer, s.model.spec.top_k);
    if (full.moe_layers != s.model.spec.moe_layers() || full.tokens.size() < need) {
      throw ConfigError("routing trace does not match the model or is too short");
    }
  } else {
    RoutingGeneratorSpec g = s.workload.routing;
    g.seed = s.seed ^ kTraceSalt;
    full = generate_routing(g, s.model.spec, need);
  }
  p.history = full;
  p.history.tokens.assign(full.tokens.begin(),
                          full.tokens.begin() + static_cast<std::ptrdiff_t>(s.workload.history_tokens));
  p.run = full;
  p.run.tokens.assign(full.tokens.begin() + static_cast<std::ptrdiff_t>(s.workload.history_tokens),
                      full.tokens.begin() + static_cast<std::ptrdiff_t>(need));
  if (p.history.tokens.empty()) {
    p.stats = collect_stats(p.run);
  } else {
    p.stats = collect_stats(p.history);
  }

  p.calibration = make_calibration(s.model.spec.expert_param_dim, s.fusion.calibration_probes,
                                   s.fusion.calibration_output_dim, s.seed + 7);
  if (s.fusion.enabled) {
    p.library = build_library(p.model, p.stats, s.fusion.configs, p.calibration);
  } else {
    p.library.variants.push_back(original_variant(p.model));
  }

  const int L = s.model.spec.moe_layers();
  p.predictors.resize(std::max(0, L - 1));
  const bool train = s.offload.scope != OffloadScope::None &&
                     s.offload.predictor == PredictorKind::Mlp && !p.history.tokens.empty();
  if (train) {
    for (int l = 0; l + 1 < L; ++l) {
      if (!layer_offloaded(s, l + 1)) continue;
      TrainingConfig tc = s.offload.training;
      tc.seed = s.seed * 31 + static_cast<std::uint64_t>(l);
      p.predictors[l] = train_predictor(p.history, l, tc);
    }
  }
  p.resources = generate_trace(trace_spec(s));
  return p;
}

namespace {

class Run {
 public:
  Run(const PreparedScenario& p, const RunOptions& opts)
      : p_(p), s_(p.scenario), opts_(opts),
        policy_(opts.policy.value_or(p.scenario.offload.policy)),
        prefetch_(opts.prefetch.value_or(p.scenario.offload.prefetch)),
        perf_(RegressionModel::zeros(FeatureVector::kSize, p.scenario.workload.perf_learning_rate)) {}

  SimReport execute();

 private:
  double budget() const;
  double footprint(const ModelVariant& v) const;
  std::optional<std::size_t> choose(double budget) const;
  void install(std::size_t variant_index, bool charge);
  void log(const char* event, int id, Tier from, Tier to, double bytes);
  void advance_transfers();
  void shift_transfers(double d);
  double issue_transfer(int id);
  void cancel_transfer(int id);
  void cancel_stale(int layer);
  void repack_transfers();
  void demand(int id, double bw, std::vector<int>& used);
  void prefetch_for(int layer, const TokenRecord& tok, const std::vector<int>& current_orig);
  std::vector<double> next_layer_probs(int layer, const TokenRecord& tok,
                                       const std::vector<int>& current_orig);
  void make_room_in_workspace(const std::vector<int>& keep);
  void demote(int id);
  std::vector<double> eviction_scores() const;
  double similarity(int a, int b);
  double resident_bytes() const;
  void tick_resources(std::size_t t);
  void perf_update(std::size_t t);

  const PreparedScenario& p_;
  const Scenario& s_;
  const RunOptions& opts_;
  OffloadPolicy policy_;
  PrefetchMode prefetch_;
  RegressionModel perf_;

  std::size_t variant_ = 0;
  const ModelVariant* var_ = nullptr;
  Footprint fp_;
  CacheState cache_;
  std::vector<int> offset_;
  std::vector<bool> offloaded_;
  std::vector<bool> pinned_;
  std::vector<double> popularity_;
  std::vector<double> priority_;
  std::vector<double> priority_cut_;
  std::vector<std::vector<std::vector<double>>> sim_;  // lazily per layer
  std::vector<double> inflight_;  // completion time or -1
  std::vector<double> start_;
  std::vector<double> duration_;
  std::vector<int> inflight_ids_;
  EventQueue transfers_;
  double link_free_ = 0;
  std::vector<double> p_next_;

  SmoothedResource mem_s_;
  SmoothedResource bw_s_;
  double last_eval_mem_ = 0;
  double t_stable_ = 0;
  bool pending_eval_ = false;

  ResourceSample sample_;
  std::uint64_t tick_ = 0;
  double now_ = 0;
  double token_comm_ = 0;
  SimReport r_;
  double mem_sum_ = 0;
  double penalty_sum_ = 0;
  double window_comp_ = 0;
  double window_comm_ = 0;
  std::size_t window_tokens_ = 0;
};

double Run::budget() const {
  const double risk = 1.0 + s_.resources.beta_risk * (1.0 - mem_s_.stability());
  return s_.resources.a_m * std::max(0.0, mem_s_.value()) / risk;
}

double Run::footprint(const ModelVariant& v) const {
  return footprint_of(s_, v, budget()).required;
}

std::optional<std::size_t> Run::choose(double b) const {
  const auto& lib = p_.library;
  const FootprintFn fp = [&](const ModelVariant& v) { return footprint_of(s_, v, b).required; };
  SelectionRule rule{s_.fusion.selection, s_.fusion.p_threshold};
  auto pick = select_variant(lib, b, rule, fp);
  if (!pick && rule.mode == SelectionMode::MinMemory) {
    // Threshold filters but never changes feasibility.
    pick = select_variant(lib, b, SelectionRule{SelectionMode::MaxPerf, 0.0}, fp);
  }
  if (pick && rule.mode == SelectionMode::MinMemory &&
      lib.variants[*pick].perf_estimate < rule.p_threshold) {
    pick = select_variant(lib, b, SelectionRule{SelectionMode::MaxPerf, 0.0}, fp);
  }
  return pick;
}

void Run::log(const char* event, int id, Tier from, Tier to, double bytes) {
  if (!opts_.event_log) return;
  const int layer = cache_.layer_of(id);
  nlohmann::json rec = {{"tick", tick_},
                        {"event", event},
                        {"expert", expert_label(layer, id - offset_[layer])},
                        {"tier_from", tier_name(from)},
                        {"tier_to", tier_name(to)},
                        {"bytes", bytes}};
  *opts_.event_log << rec.dump() << '\n';
}

void Run::install(std::size_t index, bool charge) {
  variant_ = index;
  var_ = &p_.library.variants[index];
  const double b = budget();
  fp_ = footprint_of(s_, *var_, b);
  const int L = static_cast<int>(var_->layers.size());

  offset_.assign(L + 1, 0);
  for (int l = 0; l < L; ++l) offset_[l + 1] = offset_[l] + var_->retained(l);
  const int n = offset_[L];
  std::vector<double> sizes(n);
  std::vector<int> layer_of(n);
  offloaded_.assign(L, false);
  pinned_.assign(n, false);
  popularity_.assign(n, 0.0);
  for (int l = 0; l < L; ++l) {
    offloaded_[l] = !fp_.all_resident && layer_offloaded(s_, l);
    const auto& vl = var_->layers[l];
    for (int g = 0; g < var_->retained(l); ++g) {
      const int id = offset_[l] + g;
      sizes[id] = vl.experts[g].size;
      layer_of[id] = l;
      pinned_[id] = !offloaded_[l];
    }
    const auto f = p_.stats.freqs(l);
    for (int j = 0; j < static_cast<int>(f.size()); ++j) {
      popularity_[offset_[l] + vl.slot_map[j]] += f[j];
    }
  }

  double ws_cap, cache_cap;
  if (fp_.all_resident) {
    ws_cap = var_->expert_bytes();
    cache_cap = 0;
  } else {
    ws_cap = fp_.resident + fp_.working_set;
    const double fixed = s_.model.spec.non_expert_bytes + s_.offload.staging_bytes + ws_cap;
    cache_cap = std::clamp(b - fixed, s_.offload.min_cache_fraction * fp_.offloadable,
                           fp_.offloadable);
    if (s_.offload.cache_limit_bytes >= 0) {
      cache_cap = std::min(cache_cap, s_.offload.cache_limit_bytes);
    }
  }
  cache_ = CacheState(sizes, layer_of, ws_cap, cache_cap, s_.offload.recency_half_life);

  const double max_pop = *std::max_element(popularity_.begin(), popularity_.end());
  std::vector<double> importance(n);
  for (int id = 0; id < n; ++id) {
    importance[id] = max_pop > 0 ? std::max(popularity_[id] / max_pop, 1e-6) : 1.0;
  }
  cache_.set_importance(std::move(importance));

  // Offload priority per expert and the per-layer always-fetch cut.
  const double bw0 = std::max(p_.scenario.resources.base.bw_gpu_cpu, 1.0);
  priority_.assign(n, 0.0);
  priority_cut_.assign(L, INFINITY);
  double normalizer = 0;
  for (int id = 0; id < n; ++id) {
    normalizer = std::max(normalizer, sizes[id] / (sizes[id] / bw0));
  }
  for (int l = 0; l < L; ++l) {
    std::vector<double> pr;
    for (int id = offset_[l]; id < offset_[l + 1]; ++id) {
      priority_[id] = offload_priority(popularity_[id], sizes[id], sizes[id] / bw0,
                                       policy_.gamma_prio, normalizer);
      pr.push_back(priority_[id]);
    }
    if (offloaded_[l]) priority_cut_[l] = quantile(pr, policy_.priority_quantile);
  }
  sim_.assign(L, {});

  double loaded = 0;
  for (int id = 0; id < n; ++id) {
    if (pinned_[id]) {
      cache_.move(id, Tier::Workspace);
      loaded += sizes[id];
    }
  }
  if (!fp_.all_resident) {
    std::vector<int> candidates;
    for (int id = 0; id < n; ++id) {
      if (!pinned_[id]) candidates.push_back(id);
    }
    const auto plan = plan_initial_placement(cache_, candidates, popularity_, fp_.working_set);
    for (int id : candidates) {
      if (plan.assignment[id] != Tier::Host) loaded += sizes[id];
    }
    apply_placement(cache_, plan);
  }
  inflight_.assign(n, -1.0);
  start_.assign(n, 0.0);
  duration_.assign(n, 0.0);
  inflight_ids_.clear();
  transfers_ = EventQueue{};
  link_free_ = now_;
  p_next_.assign(n, 0.0);

  if (charge) {
    // A switch reloads the new variant's device-resident experts.
    const double reload = loaded / std::max(sample_.bw_gpu_cpu, 1.0);
    r_.comm_latency += reload;
    now_ += reload;
    r_.adjust_latency += s_.workload.switch_latency;
    now_ += s_.workload.switch_latency;
    r_.comm_volume += loaded;
    ++r_.switch_count;
  }
}

void Run::advance_transfers() {
  while (!transfers_.empty() && transfers_.top().time <= now_) {
    const Event e = transfers_.pop();
    const int id = e.payload;
    if (inflight_[id] >= 0 && inflight_[id] <= now_) {
      inflight_[id] = -1;
      std::erase(inflight_ids_, id);
    }
  }
}

void Run::shift_transfers(double d) {
  if (inflight_ids_.empty()) return;
  transfers_ = EventQueue{};
  for (int id : inflight_ids_) {
    inflight_[id] += d;
    start_[id] += d;
    transfers_.push(inflight_[id], EventKind::TransferDone, id);
  }
  link_free_ += d;
}

double Run::issue_transfer(int id) {
  const double bw = std::max(sample_.bw_gpu_cpu, 1.0);
  const double start = std::max(now_, link_free_);
  const double done = start + cache_.expert_size(id) / bw;
  start_[id] = start;
  duration_[id] = done - start;
  link_free_ = done;
  inflight_[id] = done;
  inflight_ids_.push_back(id);
  transfers_.push(done, EventKind::TransferDone, id);
  ++r_.expert_load_count;
  r_.comm_volume += cache_.expert_size(id);
  return done;
}

// Aborts an unfinished transfer; bytes not yet moved are refunded.
void Run::cancel_transfer(int id) {
  const double remaining = inflight_[id] - std::max(now_, start_[id]);
  const double frac = duration_[id] > 0 ? std::clamp(remaining / duration_[id], 0.0, 1.0) : 0.0;
  r_.comm_volume -= frac * cache_.expert_size(id);
  if (frac >= 1.0) --r_.expert_load_count;
  log("cancel", id, cache_.tier(id), Tier::Host, cache_.expert_size(id));
  cache_.move(id, Tier::Host);
  inflight_[id] = -1;
  std::erase(inflight_ids_, id);
}

// Prefetches for layers the token has already passed can no longer help.
void Run::cancel_stale(int layer) {
  advance_transfers();
  const auto ids = inflight_ids_;
  bool any = false;
  for (int id : ids) {
    if (cache_.layer_of(id) <= layer) {
      cancel_transfer(id);
      any = true;
    }
  }
  if (any) repack_transfers();
}

// Closes gaps left by cancelled transfers; the one on the wire keeps its slot.
void Run::repack_transfers() {
  transfers_ = EventQueue{};
  double t = now_;
  for (int id : inflight_ids_) {
    if (start_[id] > now_) {
      start_[id] = t;
      inflight_[id] = t + duration_[id];
    }
    t = std::max(t, inflight_[id]);
    transfers_.push(inflight_[id], EventKind::TransferDone, id);
  }
  link_free_ = t;
}

double Run::similarity(int a, int b) {
  const int l = cache_.layer_of(a);
  if (sim_[l].empty()) {
    sim_[l] = similarity_matrix(var_->layers[l].experts, 0.5, p_.calibration);
  }
  return sim_[l][a - offset_[l]][b - offset_[l]];
}

std::vector<double> Run::eviction_scores() const {
  std::vector<double> scores(cache_.size(), 0.0);
  for (int id : cache_.members(Tier::Cache)) {
    scores[id] = inflight_[id] >= 0
                     ? -std::numeric_limits<double>::infinity()
                     : eviction_score(p_next_[id], cache_.recent(id, static_cast<double>(tick_)),
                                      cache_.importance(id), policy_.delta_evict,
                                      policy_.lambda_evict);
  }
  return scores;
}

void Run::demote(int id) {
  const double s = cache_.expert_size(id);
  if (s <= cache_.capacity(Tier::Cache)) {
    if (!cache_.fits(id, Tier::Cache)) {
      const auto scores = eviction_scores();
      for (int e : evict(cache_, s - cache_.free(Tier::Cache), scores)) {
        log("evict", e, Tier::Cache, Tier::Host, cache_.expert_size(e));
      }
    }
    if (cache_.fits(id, Tier::Cache)) {
      cache_.move(id, Tier::Cache);
      log("evict", id, Tier::Workspace, Tier::Cache, s);
      return;
    }
  }
  cache_.move(id, Tier::Host);
  log("evict", id, Tier::Workspace, Tier::Host, s);
}

void Run::make_room_in_workspace(const std::vector<int>& keep) {
  std::vector<int> members(cache_.members(Tier::Workspace).begin(),
                           cache_.members(Tier::Workspace).end());
  for (int id : members) {
    if (pinned_[id] || std::find(keep.begin(), keep.end(), id) != keep.end()) continue;
    demote(id);
  }
}

void Run::demand(int id, double bw, std::vector<int>& used) {
  const int layer = cache_.layer_of(id);
  if (!offloaded_[layer]) {
    used.push_back(id);
    return;
  }
  ++r_.offloaded_demands;
  advance_transfers();
  if (inflight_[id] >= 0 && start_[id] > now_) {
    // Still queued: the demand preempts the link instead of waiting its turn.
    cancel_transfer(id);
    repack_transfers();
  }
  if (inflight_[id] >= 0) {
    const double wait = std::max(0.0, inflight_[id] - now_);
    now_ += wait;
    token_comm_ += wait;
    advance_transfers();
    ++r_.device_hits;
    log("hit", id, cache_.tier(id), cache_.tier(id), 0);
    used.push_back(id);
    return;
  }
  if (cache_.on_device(id)) {
    ++r_.device_hits;
    log("hit", id, cache_.tier(id), cache_.tier(id), 0);
    used.push_back(id);
    return;
  }
  if (policy_.substitution) {
    const auto c = correct_misprediction(
        id, cache_, [this](int a, int b) { return similarity(a, b); }, policy_,
        priority_[id], priority_cut_[layer]);
    if (c.kind == Correction::Kind::Substitute) {
      ++r_.substitution_count;
      penalty_sum_ += c.penalty;
      log("substitute", id, Tier::Host, cache_.tier(c.expert), 0);
      used.push_back(c.expert);
      return;
    }
  }
  make_room_in_workspace(used);
  cache_.move(id, Tier::Workspace);
  const double d = cache_.expert_size(id) / bw;
  // Demand transfers preempt the link and push queued prefetches back.
  shift_transfers(d);
  now_ += d;
  token_comm_ += d;
  ++r_.demand_fetches;
  ++r_.expert_load_count;
  r_.comm_volume += cache_.expert_size(id);
  log("fetch", id, Tier::Host, Tier::Workspace, cache_.expert_size(id));
  used.push_back(id);
}

std::vector<double> Run::next_layer_probs(int layer, const TokenRecord& tok,
                                          const std::vector<int>& current_orig) {
  const int E = s_.model.spec.experts_per_layer;
  std::vector<double> orig;
  switch (s_.offload.predictor) {
    case PredictorKind::Mlp: {
      const auto& mlp = p_.predictors.at(layer).mlp;
      if (mlp.in_dim == 0) return {};
      orig = predict_next_layer(mlp, current_orig, tok.embedding, tok.context);
      break;
    }
    case PredictorKind::Frequency:
      orig = frequency_baseline(p_.stats, layer);
      break;
    case PredictorKind::Oracle:
      orig.assign(E, 0.0);
      for (int e : tok.layers[layer + 1].experts) {
        orig[e] += 1.0 / static_cast<double>(tok.layers[layer + 1].experts.size());
      }
      break;
  }
  const auto& vl = var_->layers[layer + 1];
  std::vector<double> merged(vl.experts.size(), 0.0);
  for (int j = 0; j < E; ++j) merged[vl.slot_map[j]] += orig[j];
  return merged;
}

void Run::prefetch_for(int layer, const TokenRecord& tok, const std::vector<int>& current_orig) {
  std::fill(p_next_.begin(), p_next_.end(), 0.0);
  const int L = static_cast<int>(var_->layers.size());
  std::vector<int> selection = current_orig;
  double confidence = 1.0;
  for (int z = 1; z <= s_.offload.lookahead && layer + z < L; ++z) {
    const int from = layer + z - 1;
    const int target = layer + z;
    if (!offloaded_[target]) break;
    r_.predictor_latency += s_.workload.predictor_cost;
    now_ += s_.workload.predictor_cost;
    TokenRecord probe = tok;
    if (z > 1) probe.layers[from].experts = selection;
    auto probs = next_layer_probs(from, probe, selection);
    if (probs.empty()) break;
    for (double& v : probs) v *= confidence;
    for (std::size_t i = 0; i < probs.size(); ++i) p_next_[offset_[target] + i] = probs[i];
    if (prefetch_ == PrefetchMode::None) continue;

    double theta;
    if (prefetch_ == PrefetchMode::Fixed) {
      theta = s_.offload.fixed_theta >= 0 ? s_.offload.fixed_theta
                                          : std::clamp(policy_.theta_base * (1.0 + policy_.delta_pref), 0.0, 1.0);
    } else {
      theta = prefetch_threshold(policy_, bw_s_.stability(), sample_.gpu_mem_avail(),
                                 sample_.gpu_mem_total);
    }
    double budget = cache_.free(Tier::Cache);
    for (int id : cache_.members(Tier::Cache)) {
      if (inflight_[id] < 0 && cache_.layer_of(id) != layer) budget += cache_.expert_size(id);
    }
    std::vector<int> ids(probs.size());
    std::iota(ids.begin(), ids.end(), offset_[target]);
    const auto chosen = decide_prefetch(probs, ids, theta, cache_, budget);
    for (int id : chosen) {
      const double p_use = probs[id - offset_[target]];
      const double need = cache_.expert_size(id) - cache_.free(Tier::Cache);
      if (need > 0) {
        // Only displace residents that are less likely to be used than the
        // candidate; others, in-flight ones and the current layer are kept.
        auto scores = eviction_scores();
        double displaceable = 0;
        for (int m : cache_.members(Tier::Cache)) {
          if (cache_.layer_of(m) == layer || inflight_[m] >= 0 || popularity_[m] >= p_use) {
            scores[m] = -std::numeric_limits<double>::infinity();
          } else {
            displaceable += cache_.expert_size(m);
          }
        }
        if (displaceable < need) continue;
        for (int e : evict(cache_, need, scores)) {
          log("evict", e, Tier::Cache, Tier::Host, cache_.expert_size(e));
        }
      }
      if (!cache_.fits(id, Tier::Cache)) break;
      cache_.move(id, Tier::Cache);
      issue_transfer(id);
      ++r_.prefetches;
      log("prefetch", id, Tier::Host, Tier::Cache, cache_.expert_size(id));
    }
    // Chain the most likely next selection for deeper lookahead.
    const auto top = std::max_element(probs.begin(), probs.end());
    confidence = *top;
    const auto& vl = var_->layers[target];
    const int principal = vl.groups[top - probs.begin()].principal;
    selection.assign(1, principal);
  }
  if (opts_.check_invariants) cache_.check_invariants();
}

double Run::resident_bytes() const {
  double b = s_.model.spec.non_expert_bytes + cache_.used(Tier::Workspace) +
             cache_.used(Tier::Cache) + s_.resources.activation_reserve;
  if (!fp_.all_resident) b += s_.offload.staging_bytes;
  return b;
}

void Run::tick_resources(std::size_t t) {
  sample_ = p_.resources[t % p_.resources.size()];
  const double m = mem_metric_value(sample_, s_.resources.mem_metric);
  const double bw = get_field(sample_, s_.resources.bw_metric);
  if (t == 0) {
    mem_s_ = SmoothedResource::start(m, s_.resources.alpha_ewma, s_.resources.window);
    bw_s_ = SmoothedResource::start(bw, s_.resources.alpha_ewma, s_.resources.window);
    last_eval_mem_ = mem_s_.value();
    return;
  }
  mem_s_ = ewma_update(mem_s_, m);
  bw_s_ = ewma_update(bw_s_, bw);
  const bool adaptive = s_.resources.switching || prefetch_ == PrefetchMode::Dynamic;
  if (adaptive) {
    r_.adjust_latency += s_.workload.adjust_cost;
    now_ += s_.workload.adjust_cost;
  }
  const double s_e = var_->expert_bytes() / std::max(1, offset_.back());
  const int target = granularity_decision(s_.resources.a_m, mem_s_.value(), s_e,
                                          s_.resources.beta_risk, mem_s_.stability(),
                                          s_.model.spec.experts_per_layer);
  r_.granularity_target_min = std::min(r_.granularity_target_min, target);

  if (!s_.resources.switching || opts_.variant) return;
  const double base = std::max(std::abs(last_eval_mem_), 1.0);
  if (std::abs(mem_s_.value() - last_eval_mem_) / base > s_.resources.significant_change) {
    pending_eval_ = true;
    t_stable_ = 0;
    last_eval_mem_ = mem_s_.value();
  } else {
    t_stable_ += 1;
  }
  if (!pending_eval_) return;
  const double b = budget();
  const auto cand = choose(b);
  if (!cand) return;
  const bool still_fits = footprint(*var_) <= b;
  if (*cand == variant_) {
    if (still_fits) pending_eval_ = false;
    return;
  }
  const auto& c = p_.library.variants[*cand];
  if (!still_fits || should_switch(*var_, c, s_.resources.switch_policy, t_stable_)) {
    install(*cand, true);
    pending_eval_ = false;
  } else if (t_stable_ > s_.resources.switch_policy.t_threshold) {
    pending_eval_ = false;
  }
}

void Run::perf_update(std::size_t t) {
  if (!s_.workload.perf_model || window_tokens_ == 0) return;
  if ((t + 1) % static_cast<std::size_t>(s_.workload.routing.sequence_length) != 0) return;
  ConfigSummary cfg;
  cfg.retained_experts =
      static_cast<double>(offset_.back()) / std::max<std::size_t>(1, var_->layers.size());
  cfg.expert_size = var_->expert_bytes() / std::max(1, offset_.back());
  cfg.top_k = s_.model.spec.top_k;
  cfg.moe_layers = static_cast<double>(var_->layers.size());
  const auto x = extract_features(sample_, cfg);
  PredictionTargets obs;
  obs.comp_latency = window_comp_ / static_cast<double>(window_tokens_);
  obs.comm_latency = window_comm_ / static_cast<double>(window_tokens_);
  obs.mem_usage = resident_bytes() / 1e9;
  const auto pred = predict(perf_, x);
  r_.perf_model_rel_error =
      obs.comp_latency > 0 ? std::abs(pred.comp_latency - obs.comp_latency) / obs.comp_latency : 0;
  perf_ = online_update(perf_, x, obs);
  r_.perf_model_updates = perf_.update_count;
  window_comp_ = window_comm_ = 0;
  window_tokens_ = 0;
}

SimReport Run::execute() {
  r_.scenario = s_.name;
  r_.method = method_name(s_.method);
  r_.seed = s_.seed;
  r_.granularity_target_min = s_.model.spec.experts_per_layer;

  tick_resources(0);
  const double b = budget();
  r_.budget = b;
  std::optional<std::size_t> pick;
  if (opts_.variant) {
    for (std::size_t i = 0; i < p_.library.variants.size(); ++i) {
      if (p_.library.variants[i].id == *opts_.variant) pick = i;
    }
    if (!pick) throw ConfigError("unknown variant '" + *opts_.variant + "'");
    if (footprint_of(s_, p_.library.variants[*pick], b).required > b) pick.reset();
  } else {
    pick = choose(b);
  }
  if (!pick) {
    r_.feasible = false;
    double best = INFINITY;
    for (const auto& v : p_.library.variants) best = std::min(best, footprint_of(s_, v, b).required);
    r_.deploy_footprint = best;
    r_.infeasible_reason = "smallest footprint " + std::to_string(best / 1e9) +
                           " GB exceeds budget " + std::to_string(b / 1e9) + " GB";
    return r_;
  }
  install(*pick, false);
  r_.variant = var_->id;
  r_.deploy_footprint = fp_.required;
  double acc_sum = 0;
  int acc_n = 0;
  for (const auto& tp : p_.predictors) {
    if (tp.mlp.in_dim > 0) {
      acc_sum += tp.validation_accuracy;
      ++acc_n;
    }
  }
  r_.predictor_accuracy = acc_n ? acc_sum / acc_n : 0;

  const std::size_t n_tokens =
      std::min(opts_.max_tokens.value_or(p_.run.tokens.size()), p_.run.tokens.size());
  const auto& spec = s_.model.spec;
  for (std::size_t t = 0; t < n_tokens; ++t) {
    tick_ = t;
    if (t > 0) tick_resources(t);
    const auto& tok = p_.run.tokens[t];
    double token_comp = 0;
    token_comm_ = 0;
    const double C = std::max(sample_.gpu_compute, 1.0);
    const double bw = std::max(sample_.bw_gpu_cpu, 1.0);
    for (int l = 0; l < spec.moe_layers(); ++l) {
      const auto& vl = var_->layers[l];
      std::vector<int> ids;
      for (int e : tok.layers[l].experts) {
        const int id = offset_[l] + vl.slot_map[e];
        if (std::find(ids.begin(), ids.end(), id) == ids.end()) ids.push_back(id);
      }
      std::vector<int> used;
      for (int id : ids) demand(id, bw, used);
      cancel_stale(l);
      if (l + 1 < spec.moe_layers() && offloaded_[l + 1]) {
        prefetch_for(l, tok, tok.layers[l].experts);
      }
      double comp = s_.workload.dense_flops / C;
      for (int id : used) {
        comp += s_.workload.flops_per_byte * cache_.expert_size(id) *
                (1.0 + s_.workload.util_penalty * sample_.gpu_util) / C;
        cache_.record_access(id, static_cast<double>(t));
      }
      token_comp += comp;
      now_ += comp;
      for (int id : used) {
        if (!pinned_[id] && cache_.tier(id) == Tier::Workspace) demote(id);
      }
      if (opts_.check_invariants) cache_.check_invariants();
    }
    advance_transfers();
    r_.comp_latency += token_comp;
    r_.comm_latency += token_comm_;
    window_comp_ += token_comp;
    window_comm_ += token_comm_;
    ++window_tokens_;

    const double resident = resident_bytes();
    r_.peak_mem = std::max(r_.peak_mem, resident);
    mem_sum_ += resident;
    if (resident > sample_.gpu_mem_avail()) ++r_.failure_count;
    perf_update(t);
  }
  r_.tokens = n_tokens;
  r_.final_variant = var_->id;
  r_.total_latency = r_.comp_latency + r_.comm_latency + r_.predictor_latency + r_.adjust_latency;
  r_.mean_token_latency = n_tokens ? r_.total_latency / static_cast<double>(n_tokens) : 0;
  r_.avg_mem = n_tokens ? mem_sum_ / static_cast<double>(n_tokens) : 0;
  r_.hit_rate = r_.offloaded_demands
                    ? static_cast<double>(r_.device_hits) / static_cast<double>(r_.offloaded_demands)
                    : 1.0;
  r_.mean_substitution_penalty =
      r_.substitution_count ? penalty_sum_ / static_cast<double>(r_.substitution_count) : 0;
  r_.throughput = r_.total_latency > 0 ? static_cast<double>(n_tokens) / r_.total_latency : 0;
  r_.pmr = r_.peak_mem > 0 ? compute_pmr(r_.throughput, r_.peak_mem) : 0;
  if (r_.total_latency > 0) {
    r_.predictor_fraction = r_.predictor_latency / r_.total_latency;
    r_.adjust_fraction = r_.adjust_latency / r_.total_latency;
  }
  return r_;
}

}  // namespace

SimReport simulate(const PreparedScenario& p, const RunOptions& opts) {
  Run run(p, opts);
  return run.execute();
}

SimReport run_inference(const Scenario& s, std::ostream* event_log) {
  const auto p = prepare(s);
  RunOptions opts;
  opts.event_log = event_log;
  return simulate(p, opts);
}

}  // namespace moesim
