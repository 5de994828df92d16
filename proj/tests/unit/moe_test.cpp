// Copyright (c) The moesim Authors.
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <random>
#include <sstream>

#include "moesim/error.hpp"
#include "moesim/moe.hpp"

namespace moesim {
namespace {

MoeModelSpec small_spec(int experts = 8) {
  MoeModelSpec s;
  s.total_layers = 4;
  s.moe_layer_indices = {1, 3};
  s.encoder_moe_layers = 1;
  s.decoder_moe_layers = 1;
  s.experts_per_layer = experts;
  s.expert_param_dim = 16;
  s.expert_size = 1e6;
  s.top_k = 1;
  return s;
}

TEST(Presets, TotalBytesMatchParameterCounts) {
  const std::map<std::string, double> params{
      {"sb8", 0.5e9}, {"sb32", 1.98e9}, {"sb64", 3.8e9}, {"sb128", 7.4e9}, {"sb256", 15.8e9}};
  for (const auto& [name, p] : params) {
    const auto spec = model_preset(name);
    EXPECT_NEAR(spec.total_bytes(), 2 * p, 2 * p * 1e-9) << name;
    EXPECT_EQ(spec.moe_layers(), 12);
    EXPECT_EQ(spec.encoder_moe_layers, 6);
    EXPECT_EQ(spec.decoder_moe_layers, 6);
    EXPECT_EQ(spec.top_k, 1);
    EXPECT_NO_THROW(validate(spec));
  }
  EXPECT_EQ(model_preset("sb32").experts_per_layer, 32);
  EXPECT_THROW(model_preset("sb7"), ConfigError);
}

TEST(Synthesize, DeterministicAndCounted) {
  const auto spec = model_preset("sb32");
  const auto a = synthesize_model(spec, 4);
  const auto b = synthesize_model(spec, 4);
  ASSERT_EQ(a.expert_count(), 12u * 32u);
  for (std::size_t l = 0; l < a.layers.size(); ++l) {
    for (std::size_t e = 0; e < a.layers[l].size(); ++e) {
      ASSERT_EQ(a.layers[l][e].params, b.layers[l][e].params);
    }
  }
  EXPECT_NE(synthesize_model(spec, 5).layers[0][0].params, a.layers[0][0].params);
}

TEST(Synthesize, SizeOverridesApply) {
  auto spec = small_spec();
  spec.size_overrides[{1, 2}] = 5e6;
  const auto m = synthesize_model(spec, 1);
  EXPECT_EQ(m.layers[1][2].size, 5e6);
  EXPECT_EQ(m.layers[1][3].size, 1e6);
  EXPECT_EQ(spec.expert_bytes(), 15 * 1e6 + 5e6);
}

TEST(Routing, RhoOneIsDeterministicTransition) {
  auto spec = small_spec();
  RoutingGeneratorSpec g;
  g.rho = 1.0;
  g.seed = 3;
  const auto trace = generate_routing(g, spec, 2000);
  std::map<int, int> next;
  for (const auto& t : trace.tokens) {
    const int a = t.layers[0].experts[0], b = t.layers[1].experts[0];
    auto [it, fresh] = next.emplace(a, b);
    ASSERT_EQ(it->second, b);
  }
}

TEST(Routing, ZeroSkewIsUniformWithinBinomialBounds) {
  auto spec = small_spec();
  RoutingGeneratorSpec g;
  g.skew = {0.0};
  g.seed = 9;
  const std::size_t n = 10000;
  const auto stats = collect_stats(generate_routing(g, spec, n));
  const double p = 1.0 / 8, sd = std::sqrt(n * p * (1 - p));
  for (int l = 0; l < 2; ++l) {
    for (int e = 0; e < 8; ++e) {
      EXPECT_NEAR(static_cast<double>(stats.counts[l][e]), n * p, 3 * sd);
    }
  }
}

double mutual_information(const std::vector<int>& a, const std::vector<int>& b, int E) {
  std::vector<double> pa(E), pb(E), pab(E * E);
  const double n = static_cast<double>(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    pa[a[i]] += 1 / n;
    pb[b[i]] += 1 / n;
    pab[a[i] * E + b[i]] += 1 / n;
  }
  double mi = 0;
  for (int i = 0; i < E; ++i) {
    for (int j = 0; j < E; ++j) {
      const double p = pab[i * E + j];
      if (p > 0) mi += p * std::log(p / (pa[i] * pb[j]));
    }
  }
  return mi;
}

TEST(Routing, RhoZeroHasNoConsecutiveDependence) {
  auto spec = small_spec();
  RoutingGeneratorSpec g;
  g.rho = 0.0;
  g.seed = 21;
  const auto trace = generate_routing(g, spec, 10000);
  std::vector<int> a, b;
  for (const auto& t : trace.tokens) {
    a.push_back(t.layers[0].experts[0]);
    b.push_back(t.layers[1].experts[0]);
  }
  const double mi = mutual_information(a, b, 8);
  std::mt19937_64 rng(1);
  double worst = 0;
  for (int k = 0; k < 50; ++k) {
    auto shuffled = b;
    std::shuffle(shuffled.begin(), shuffled.end(), rng);
    worst = std::max(worst, mutual_information(a, shuffled, 8));
  }
  EXPECT_LT(mi, 1.5 * worst);
}

TEST(Routing, TopKSelectionsAreDistinct) {
  auto spec = small_spec();
  spec.top_k = 2;
  RoutingGeneratorSpec g;
  g.rho = 0.5;
  for (const auto& t : generate_routing(g, spec, 500).tokens) {
    for (const auto& l : t.layers) {
      ASSERT_EQ(l.experts.size(), 2u);
      ASSERT_NE(l.experts[0], l.experts[1]);
    }
  }
}

TEST(Routing, JsonlRoundTrip) {
  auto spec = small_spec();
  RoutingGeneratorSpec g;
  g.rho = 0.7;
  const auto trace = generate_routing(g, spec, 50);
  std::stringstream ss;
  write_trace_jsonl(ss, trace);
  const auto back = read_trace_jsonl(ss, 8, 1);
  ASSERT_EQ(back.tokens.size(), trace.tokens.size());
  for (std::size_t i = 0; i < trace.tokens.size(); ++i) {
    EXPECT_EQ(back.tokens[i].embedding, trace.tokens[i].embedding);
    EXPECT_EQ(back.tokens[i].layers[1].experts, trace.tokens[i].layers[1].experts);
  }
}

TEST(Stats, CountsToFrequencies) {
  const auto s = stats_from_counts({{50, 30, 15, 5}});
  const std::vector<double> want{0.5, 0.3, 0.15, 0.05};
  const auto got = s.freqs(0);
  for (int i = 0; i < 4; ++i) EXPECT_DOUBLE_EQ(got[i], want[i]);
  const auto one = stats_from_counts({{0, 7, 0}});
  EXPECT_EQ(one.freqs(0), (std::vector<double>{0, 1, 0}));
}

TEST(Stats, ConcatenationKeepsFrequencies) {
  auto spec = small_spec();
  RoutingGeneratorSpec g;
  auto trace = generate_routing(g, spec, 300);
  const auto once = collect_stats(trace);
  auto twice = trace;
  twice.tokens.insert(twice.tokens.end(), trace.tokens.begin(), trace.tokens.end());
  const auto doubled = collect_stats(twice);
  for (int l = 0; l < 2; ++l) EXPECT_EQ(once.freqs(l), doubled.freqs(l));
  trace.tokens.clear();
  EXPECT_THROW(collect_stats(trace), InputDomainError);
}

Expert with_params(std::vector<double> p) {
  Expert e;
  e.params = std::move(p);
  e.size = 1;
  return e;
}

TEST(Similarity, ParamCosine) {
  const auto a = with_params({1, 0}), b = with_params({1, 1}), c = with_params({0, 3});
  EXPECT_DOUBLE_EQ(param_similarity(a, a), 1);
  EXPECT_NEAR(param_similarity(a, c), 0, 1e-15);
  EXPECT_NEAR(param_similarity(a, b), 1 / std::sqrt(2.0), 1e-12);
  EXPECT_THROW(param_similarity(a, with_params({0, 0})), InputDomainError);
}

TEST(Similarity, KlMatchesHandSum) {
  const std::vector<double> p{0.5, 0.3, 0.2}, q{0.2, 0.5, 0.3};
  const double want = 0.5 * std::log(0.5 / 0.2) + 0.3 * std::log(0.3 / 0.5) +
                      0.2 * std::log(0.2 / 0.3);
  EXPECT_NEAR(kl_divergence(p, q), want, 1e-15);
  EXPECT_EQ(kl_divergence(std::vector<double>{1, 0}, std::vector<double>{0.5, 0.5}),
            std::log(2.0));
}

TEST(Similarity, FunctionalAndCombined) {
  const auto cal = make_calibration(16, 8, 12, 4);
  const auto m = synthesize_model(small_spec(), 2);
  const auto& a = m.layers[0][0];
  const auto& b = m.layers[0][5];
  EXPECT_DOUBLE_EQ(func_similarity(a, a, cal), 1.0);
  EXPECT_EQ(func_similarity(a, b, cal), func_similarity(a, b, cal));
  EXPECT_EQ(func_similarity(a, b, cal), func_similarity(b, a, cal));
  EXPECT_DOUBLE_EQ(combined_similarity(a, b, 1.0, cal), param_similarity(a, b));
  EXPECT_DOUBLE_EQ(combined_similarity(a, b, 0.0, cal), func_similarity(a, b, cal));
  const double half = combined_similarity(a, b, 0.5, cal);
  EXPECT_NEAR(half, 0.5 * param_similarity(a, b) + 0.5 * func_similarity(a, b, cal), 1e-15);
  EXPECT_THROW(combined_similarity(a, b, 1.5, cal), ConfigError);
}

TEST(Similarity, MatrixMatchesPairwise) {
  const auto cal = make_calibration(16, 8, 12, 4);
  const auto m = synthesize_model(small_spec(), 2);
  const auto s = similarity_matrix(m.layers[1], 0.5, cal);
  for (int i = 0; i < 8; ++i) {
    for (int j = 0; j < 8; ++j) {
      EXPECT_NEAR(s[i][j], combined_similarity(m.layers[1][i], m.layers[1][j], 0.5, cal), 1e-12);
    }
  }
}

TEST(Calibration, OutputIsADistribution) {
  const auto cal = make_calibration(16, 4, 10, 1);
  const auto m = synthesize_model(small_spec(), 2);
  const auto out = expert_output(m.layers[0][0].params, cal.probes[0], cal);
  ASSERT_EQ(out.size(), 10u);
  EXPECT_NEAR(std::accumulate(out.begin(), out.end(), 0.0), 1.0, 1e-12);
  for (double v : out) EXPECT_GT(v, 0);
}

}  // namespace
}  // namespace moesim
