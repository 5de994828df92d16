// Copyright (c) The moesim Authors.
// SPDX-License-Identifier: Apache-2.0

// Synthetic MoE models: geometry presets, surrogate expert parameters,
// correlated routing traces, activation statistics and expert similarity.

#pragma once

#include <cstdint>
#include <istream>
#include <map>
#include <ostream>
#include <span>
#include <string>
#include <utility>
#include <vector>

namespace moesim {

/// Layers are addressed by MoE position (0-based index into
/// moe_layer_indices); the first encoder_moe_layers positions are encoder.
struct MoeModelSpec {
  std::string name = "custom";
  int total_layers = 0;
  std::vector<int> moe_layer_indices;
  int encoder_moe_layers = 0;
  int decoder_moe_layers = 0;
  int experts_per_layer = 0;
  int expert_param_dim = 64;
  double expert_size = 0;  // bytes
  std::map<std::pair<int, int>, double> size_overrides;  // (pos, slot) -> bytes
  int top_k = 1;
  double non_expert_bytes = 0;  // attention, embeddings, norms

  int moe_layers() const { return static_cast<int>(moe_layer_indices.size()); }
  bool is_encoder(int pos) const { return pos < encoder_moe_layers; }
  double size_of(int pos, int slot) const;
  double expert_bytes() const;
  double total_bytes() const { return expert_bytes() + non_expert_bytes; }
};

/// Throws ConfigError on broken geometry.
void validate(const MoeModelSpec& spec);

/// Switch-Base geometry: 24 layers, MoE at odd layers, 6 encoder and
/// 6 decoder MoE layers, top-1 routing, 2 bytes per parameter. Names sb8,
/// sb32, sb64, sb128, sb256.
MoeModelSpec model_preset(const std::string& name);
const std::vector<std::string>& model_preset_names();

struct ExpertRef {
  int layer = 0;  // MoE position
  int slot = 0;
  auto operator<=>(const ExpertRef&) const = default;
};

struct Expert {
  int layer = 0;
  int slot = 0;
  std::vector<double> params;
  double size = 0;
  ExpertRef ref() const { return {layer, slot}; }
};

struct MoeModel {
  MoeModelSpec spec;
  std::vector<std::vector<Expert>> layers;  // [pos][slot]

  std::size_t expert_count() const;
};

/// Parameters are group centres plus per-expert perturbation, so experts in
/// the same group are measurably similar. Deterministic per seed.
MoeModel synthesize_model(const MoeModelSpec& spec, std::uint64_t seed,
                          double group_spread = 0.35);

struct LayerSelection {
  int layer = 0;
  std::vector<int> experts;
};

struct TokenRecord {
  std::uint64_t token_id = 0;
  std::vector<LayerSelection> layers;
  std::vector<double> embedding;
  std::vector<double> context;
};

struct RoutingTrace {
  int experts_per_layer = 0;
  int moe_layers = 0;
  int top_k = 1;
  std::vector<TokenRecord> tokens;
};

struct RoutingGeneratorSpec {
  std::vector<double> skew = {1.0};  // per MoE layer; last value repeats
  double rho = 0.0;
  std::uint64_t seed = 0;
  int embedding_dim = 8;
  int context_dim = 4;
  int sequence_length = 128;
};

RoutingTrace generate_routing(const RoutingGeneratorSpec& spec,
                              const MoeModelSpec& model, std::size_t n_tokens);

void write_trace_jsonl(std::ostream& os, const RoutingTrace& trace);
RoutingTrace read_trace_jsonl(std::istream& is, int experts_per_layer,
                              int top_k);

struct ActivationStats {
  std::vector<std::vector<std::uint64_t>> counts;  // [layer][slot]
  std::vector<std::uint64_t> totals;                // per layer

  double freq(int layer, int slot) const;
  std::vector<double> freqs(int layer) const;
  int layers() const { return static_cast<int>(counts.size()); }
};

ActivationStats collect_stats(const RoutingTrace& trace);
/// Stats from explicit per-layer counts.
ActivationStats stats_from_counts(std::vector<std::vector<std::uint64_t>> counts);

/// Probe inputs and the fixed projection behind the surrogate expert output
/// softmax(P * (params . probe)).
struct CalibrationSet {
  int param_dim = 0;
  int output_dim = 0;
  std::vector<std::vector<double>> probes;
  std::vector<double> projection;  // output_dim x param_dim, row-major
};

CalibrationSet make_calibration(int param_dim, int n_probes, int output_dim,
                                std::uint64_t seed);

std::vector<double> expert_output(std::span<const double> params,
                                  std::span<const double> probe,
                                  const CalibrationSet& cal);

/// KL(p || q) with 0*log(0/q) = 0.
double kl_divergence(std::span<const double> p, std::span<const double> q);

double param_similarity(const Expert& a, const Expert& b);
/// 1 - mean symmetrised KL over probes, clamped to [0,1].
double func_similarity(const Expert& a, const Expert& b,
                       const CalibrationSet& cal);
double combined_similarity(const Expert& a, const Expert& b, double alpha_sim,
                           const CalibrationSet& cal);

/// Pairwise combined similarity within one layer, computed from cached
/// per-expert outputs.
std::vector<std::vector<double>> similarity_matrix(
    std::span<const Expert> experts, double alpha_sim,
    const CalibrationSet& cal);

}  // namespace moesim
