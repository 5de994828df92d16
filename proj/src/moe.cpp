// Copyright (c) The moesim Authors.
// SPDX-License-Identifier: Apache-2.0

#include "moesim/moe.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <set>

#include <json.hpp>

#include "moesim/error.hpp"

namespace moesim {

double MoeModelSpec::size_of(int pos, int slot) const {
  auto it = size_overrides.find({pos, slot});
  return it == size_overrides.end() ? expert_size : it->second;
}

double MoeModelSpec::expert_bytes() const {
  double total = 0;
  for (int l = 0; l < moe_layers(); ++l) {
    for (int j = 0; j < experts_per_layer; ++j) total += size_of(l, j);
  }
  return total;
}

void validate(const MoeModelSpec& s) {
  if (s.total_layers <= 0) throw ConfigError("model needs at least one layer");
  if (s.moe_layer_indices.empty()) throw ConfigError("model has no MoE layers");
  std::set<int> seen;
  for (int idx : s.moe_layer_indices) {
    if (idx < 1 || idx > s.total_layers) {
      throw ConfigError("MoE layer index " + std::to_string(idx) +
                        " outside [1, total_layers]");
    }
    if (!seen.insert(idx).second) throw ConfigError("duplicate MoE layer index");
  }
  if (!std::is_sorted(s.moe_layer_indices.begin(), s.moe_layer_indices.end())) {
    throw ConfigError("MoE layer indices must be ascending");
  }
  if (s.encoder_moe_layers < 0 || s.decoder_moe_layers < 0 ||
      s.encoder_moe_layers + s.decoder_moe_layers != s.moe_layers()) {
    throw ConfigError("encoder + decoder MoE layers must equal MoE layer count");
  }
  if (s.experts_per_layer <= 0) throw ConfigError("experts_per_layer must be positive");
  if (s.top_k <= 0 || s.top_k > s.experts_per_layer) {
    throw ConfigError("top_k must lie in [1, experts_per_layer]");
  }
  if (s.expert_param_dim <= 0) throw ConfigError("expert_param_dim must be positive");
  if (!(s.expert_size > 0)) throw ConfigError("expert_size must be positive");
  for (const auto& [key, bytes] : s.size_overrides) {
    if (key.first < 0 || key.first >= s.moe_layers() || key.second < 0 ||
        key.second >= s.experts_per_layer || !(bytes > 0)) {
      throw ConfigError("invalid expert size override");
    }
  }
  if (s.non_expert_bytes < 0) throw ConfigError("non_expert_bytes must be nonnegative");
}

namespace {

// Total parameter counts of the Switch-Base family at 2 bytes per parameter.
// The non-expert share is solved from the 8- and 32-expert pair (which share
// expert width) and held constant across the family.
constexpr double kBytesPerParam = 2.0;
constexpr double kSwitchMoeLayers = 12.0;
constexpr double kSb8Params = 0.5e9;
constexpr double kSb32Params = 1.98e9;
constexpr double kNonExpertParams =
    kSb8Params - 8 * kSwitchMoeLayers * (kSb32Params - kSb8Params) /
                     ((32 - 8) * kSwitchMoeLayers);

struct PresetRow {
  const char* name;
  int experts;
  double params;
};

constexpr PresetRow kPresets[] = {{"sb8", 8, 0.5e9},
                                  {"sb32", 32, 1.98e9},
                                  {"sb64", 64, 3.8e9},
                                  {"sb128", 128, 7.4e9},
                                  {"sb256", 256, 15.8e9}};

}  // namespace

const std::vector<std::string>& model_preset_names() {
  static const std::vector<std::string> names = [] {
    std::vector<std::string> out;
    for (const auto& p : kPresets) out.emplace_back(p.name);
    return out;
  }();
  return names;
}

MoeModelSpec model_preset(const std::string& name) {
  for (const auto& p : kPresets) {
    if (name != p.name) continue;
    MoeModelSpec s;
    s.name = p.name;
    s.total_layers = 24;
    for (int i = 1; i <= 23; i += 2) s.moe_layer_indices.push_back(i);
    s.encoder_moe_layers = 6;
    s.decoder_moe_layers = 6;
    s.experts_per_layer = p.experts;
    s.top_k = 1;
    s.expert_param_dim = 64;
    const double expert_params =
        (p.params - kNonExpertParams) / (kSwitchMoeLayers * p.experts);
    s.expert_size = expert_params * kBytesPerParam;
    s.non_expert_bytes = kNonExpertParams * kBytesPerParam;
    return s;
  }
  throw ConfigError("unknown model preset '" + name + "'");
}

std::size_t MoeModel::expert_count() const {
  std::size_t n = 0;
  for (const auto& l : layers) n += l.size();
  return n;
}

MoeModel synthesize_model(const MoeModelSpec& spec, std::uint64_t seed,
                          double group_spread) {
  validate(spec);
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  const int E = spec.experts_per_layer;
  const int D = spec.expert_param_dim;
  const int groups = std::max(1, (E + 3) / 4);

  MoeModel m;
  m.spec = spec;
  m.layers.resize(spec.moe_layers());
  for (int l = 0; l < spec.moe_layers(); ++l) {
    std::vector<std::vector<double>> centres(groups, std::vector<double>(D));
    for (auto& c : centres) {
      for (double& v : c) v = normal(rng);
    }
    std::uniform_int_distribution<int> pick(0, groups - 1);
    auto& layer = m.layers[l];
    layer.resize(E);
    for (int j = 0; j < E; ++j) {
      const auto& c = centres[pick(rng)];
      Expert& e = layer[j];
      e.layer = l;
      e.slot = j;
      e.size = spec.size_of(l, j);
      e.params.resize(D);
      for (int d = 0; d < D; ++d) e.params[d] = c[d] + group_spread * normal(rng);
    }
  }
  return m;
}

namespace {

class ZipfSampler {
 public:
  // Rank r has weight 1/(r+1)^s; ranks map to slots through `order`.
  ZipfSampler(int n, double s, std::vector<int> order) : order_(std::move(order)) {
    cdf_.resize(n);
    double acc = 0;
    for (int r = 0; r < n; ++r) {
      acc += 1.0 / std::pow(static_cast<double>(r + 1), s);
      cdf_[r] = acc;
    }
    for (double& c : cdf_) c /= acc;
  }

  int operator()(std::mt19937_64& rng) const {
    const double u = std::uniform_real_distribution<double>(0.0, 1.0)(rng);
    auto it = std::upper_bound(cdf_.begin(), cdf_.end(), u);
    const auto rank = std::min<std::ptrdiff_t>(it - cdf_.begin(),
                                               static_cast<std::ptrdiff_t>(cdf_.size()) - 1);
    return order_[rank];
  }

 private:
  std::vector<double> cdf_;
  std::vector<int> order_;
};

std::vector<int> random_permutation(int n, std::mt19937_64& rng) {
  std::vector<int> p(n);
  std::iota(p.begin(), p.end(), 0);
  std::shuffle(p.begin(), p.end(), rng);
  return p;
}

}  // namespace

RoutingTrace generate_routing(const RoutingGeneratorSpec& spec,
                              const MoeModelSpec& model, std::size_t n_tokens) {
  validate(model);
  if (n_tokens == 0) throw InputDomainError("routing needs at least one token");
  if (!(spec.rho >= 0 && spec.rho <= 1)) throw ConfigError("rho must lie in [0,1]");
  if (spec.skew.empty()) throw ConfigError("routing skew list is empty");
  for (double s : spec.skew) {
    if (!(s >= 0)) throw ConfigError("Zipf skew must be nonnegative");
  }
  if (spec.embedding_dim < 0 || spec.context_dim < 0 || spec.sequence_length <= 0) {
    throw ConfigError("invalid routing embedding/context dimensions");
  }

  const int E = model.experts_per_layer;
  const int L = model.moe_layers();
  const int K = model.top_k;
  std::mt19937_64 rng(spec.seed);

  std::vector<ZipfSampler> samplers;
  std::vector<std::vector<int>> follow;  // follow[l][slot] -> slot at l+1
  for (int l = 0; l < L; ++l) {
    const double s = spec.skew[std::min<std::size_t>(l, spec.skew.size() - 1)];
    samplers.emplace_back(E, s, random_permutation(E, rng));
  }
  for (int l = 0; l + 1 < L; ++l) follow.push_back(random_permutation(E, rng));

  std::bernoulli_distribution correlated(spec.rho);
  std::normal_distribution<double> normal(0.0, 1.0);

  RoutingTrace trace;
  trace.experts_per_layer = E;
  trace.moe_layers = L;
  trace.top_k = K;
  trace.tokens.reserve(n_tokens);
  for (std::size_t t = 0; t < n_tokens; ++t) {
    TokenRecord rec;
    rec.token_id = t;
    rec.layers.reserve(L);
    std::vector<int> prev;
    for (int l = 0; l < L; ++l) {
      std::vector<int> chosen;
      chosen.reserve(K);
      auto add_draw = [&] {
        int e;
        do {
          e = samplers[l](rng);
        } while (std::find(chosen.begin(), chosen.end(), e) != chosen.end());
        chosen.push_back(e);
      };
      for (int k = 0; k < K; ++k) {
        if (l > 0 && correlated(rng)) {
          const int e = follow[l - 1][prev[k]];
          if (std::find(chosen.begin(), chosen.end(), e) == chosen.end()) {
            chosen.push_back(e);
            continue;
          }
        }
        add_draw();
      }
      prev = chosen;
      rec.layers.push_back({l, std::move(chosen)});
    }
    rec.embedding.resize(spec.embedding_dim);
    for (double& v : rec.embedding) v = normal(rng);
    rec.context.resize(spec.context_dim);
    const double pos = static_cast<double>(t % spec.sequence_length) /
                       static_cast<double>(spec.sequence_length);
    for (int c = 0; c < spec.context_dim; ++c) {
      const double freq = static_cast<double>(c / 2 + 1) * M_PI;
      rec.context[c] = c % 2 == 0 ? std::sin(freq * pos) : std::cos(freq * pos);
    }
    trace.tokens.push_back(std::move(rec));
  }
  return trace;
}

void write_trace_jsonl(std::ostream& os, const RoutingTrace& trace) {
  for (const auto& tok : trace.tokens) {
    nlohmann::json rec;
    rec["token_id"] = tok.token_id;
    nlohmann::json layers = nlohmann::json::array();
    for (const auto& sel : tok.layers) {
      layers.push_back({{"layer", sel.layer}, {"experts", sel.experts}});
    }
    rec["layers"] = std::move(layers);
    rec["embedding"] = tok.embedding;
    rec["context"] = tok.context;
    os << rec.dump() << '\n';
  }
}

RoutingTrace read_trace_jsonl(std::istream& is, int experts_per_layer,
                              int top_k) {
  RoutingTrace trace;
  trace.experts_per_layer = experts_per_layer;
  trace.top_k = top_k;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.empty()) continue;
    try {
      const auto rec = nlohmann::json::parse(line);
      TokenRecord tok;
      tok.token_id = rec.at("token_id").get<std::uint64_t>();
      for (const auto& sel : rec.at("layers")) {
        LayerSelection s;
        s.layer = sel.at("layer").get<int>();
        s.experts = sel.at("experts").get<std::vector<int>>();
        if (static_cast<int>(s.experts.size()) != top_k) {
          throw SchemaError("token selects wrong number of experts");
        }
        for (int e : s.experts) {
          if (e < 0 || e >= experts_per_layer) {
            throw SchemaError("selected expert slot out of range");
          }
        }
        tok.layers.push_back(std::move(s));
      }
      tok.embedding = rec.at("embedding").get<std::vector<double>>();
      tok.context = rec.at("context").get<std::vector<double>>();
      if (trace.tokens.empty()) {
        trace.moe_layers = static_cast<int>(tok.layers.size());
      } else if (static_cast<int>(tok.layers.size()) != trace.moe_layers) {
        throw SchemaError("tokens disagree on MoE layer count");
      }
      trace.tokens.push_back(std::move(tok));
    } catch (const nlohmann::json::exception& e) {
      throw SchemaError("routing trace line " + std::to_string(lineno) + ": " +
                        e.what());
    }
  }
  return trace;
}

double ActivationStats::freq(int layer, int slot) const {
  const auto total = totals.at(layer);
  if (total == 0) return 0.0;
  return static_cast<double>(counts.at(layer).at(slot)) /
         static_cast<double>(total);
}

std::vector<double> ActivationStats::freqs(int layer) const {
  std::vector<double> f(counts.at(layer).size());
  for (std::size_t j = 0; j < f.size(); ++j) f[j] = freq(layer, static_cast<int>(j));
  return f;
}

ActivationStats stats_from_counts(std::vector<std::vector<std::uint64_t>> counts) {
  ActivationStats s;
  s.totals.reserve(counts.size());
  for (const auto& layer : counts) {
    s.totals.push_back(std::accumulate(layer.begin(), layer.end(), std::uint64_t{0}));
  }
  s.counts = std::move(counts);
  return s;
}

ActivationStats collect_stats(const RoutingTrace& trace) {
  if (trace.tokens.empty()) throw InputDomainError("routing trace is empty");
  std::vector<std::vector<std::uint64_t>> counts(
      trace.moe_layers, std::vector<std::uint64_t>(trace.experts_per_layer, 0));
  for (const auto& tok : trace.tokens) {
    for (const auto& sel : tok.layers) {
      for (int e : sel.experts) ++counts.at(sel.layer).at(e);
    }
  }
  return stats_from_counts(std::move(counts));
}

}  // namespace moesim
