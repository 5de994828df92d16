// Copyright (c) The moesim Authors.
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "moesim/error.hpp"
#include "moesim/predictor.hpp"
#include "oracles.hpp"

namespace moesim {
namespace {

RoutingTrace trace_for(double rho, double skew, std::size_t tokens, std::uint64_t seed) {
  RoutingGeneratorSpec g;
  g.rho = rho;
  g.skew = {skew};
  g.seed = seed;
  return generate_routing(g, model_preset("sb8"), tokens);
}

TEST(Predictor, InputIsKHotThenEmbeddingThenContext) {
  const std::vector<int> sel{1, 3};
  const std::vector<double> h{0.5, -0.5};
  const std::vector<double> c{2.0};
  const auto x = predictor_input(sel, 4, h, c);
  EXPECT_EQ(x, (std::vector<double>{0, 1, 0, 1, 0.5, -0.5, 2.0}));
}

TEST(Predictor, ForwardIsADistribution) {
  const auto mlp = PredictorMLP::random(6, 5, 4, 3);
  const std::vector<double> x{1, 0, 0.3, -1, 2, 0};
  const auto p = predictor_forward(mlp, x);
  ASSERT_EQ(p.size(), 4u);
  EXPECT_NEAR(std::accumulate(p.begin(), p.end(), 0.0), 1.0, 1e-12);
  for (double v : p) EXPECT_GT(v, 0);
  const auto z = predictor_forward(PredictorMLP::zeros(6, 5, 4), x);
  for (double v : z) EXPECT_DOUBLE_EQ(v, 0.25);
  EXPECT_THROW(predictor_forward(mlp, std::vector<double>(5, 0)), SchemaError);
}

TEST(Predictor, GradientMatchesFiniteDifferences) {
  auto mlp = PredictorMLP::random(5, 4, 3, 11);
  const std::vector<double> x{1, 0, 0.4, -0.7, 1.3};
  const std::vector<double> target{0, 0.5, 0.5};
  const auto g = predictor_gradient(mlp, x, target);
  const double h = 1e-6;
  auto check = [&](std::vector<double> PredictorMLP::*field) {
    auto& params = mlp.*field;
    const auto& grad = g.*field;
    for (std::size_t i = 0; i < params.size(); ++i) {
      const double orig = params[i];
      params[i] = orig + h;
      const double up = predictor_loss(mlp, x, target);
      params[i] = orig - h;
      const double down = predictor_loss(mlp, x, target);
      params[i] = orig;
      const double fd = (up - down) / (2 * h);
      EXPECT_NEAR(grad[i], fd, 1e-4 * std::max(1.0, std::abs(fd)));
    }
  };
  check(&PredictorMLP::w1);
  check(&PredictorMLP::b1);
  check(&PredictorMLP::w2);
  check(&PredictorMLP::b2);
}

TEST(Predictor, GradientAgreesAcrossSeeds) {
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    EXPECT_LT(oracle::predictor_gradient_error(seed), 1e-4) << seed;
  }
}

TEST(Predictor, DeterministicRoutingIsLearnedExactly) {
  EXPECT_DOUBLE_EQ(oracle::predictor_gap(1.0, 5, 50).predictor, 1.0);
}

TEST(Predictor, BeatsFrequencyBaselineOnCorrelatedRouting) {
  const auto gap = oracle::predictor_gap(0.9, 6, 30);
  EXPECT_GE(gap.predictor - gap.baseline, 0.10) << gap.predictor << " vs " << gap.baseline;
}

TEST(Predictor, ShuffledLabelsFallToChance) {
  const auto trace = trace_for(0.9, 0.0, 4000, 8);
  auto examples = transition_examples(trace, 0);
  std::vector<std::vector<int>> labels;
  for (const auto& e : examples) labels.push_back(e.next);
  std::shuffle(labels.begin(), labels.end(), std::mt19937_64(1));
  for (std::size_t i = 0; i < examples.size(); ++i) examples[i].next = labels[i];
  TrainingConfig cfg;
  cfg.epochs = 5;
  const auto t = train_predictor(examples, trace.experts_per_layer, cfg);
  const double chance = 1.0 / trace.experts_per_layer;
  const double n = static_cast<double>(examples.size()) * cfg.holdout;
  EXPECT_NEAR(t.validation_accuracy, chance, 3 * std::sqrt(chance * (1 - chance) / n));
}

TEST(Predictor, FrequencyBaselineIsNextLayerFrequency) {
  const auto stats = stats_from_counts({{5, 5}, {1, 3}});
  EXPECT_EQ(frequency_baseline(stats, 0), (std::vector<double>{0.25, 0.75}));
  std::vector<PredictorExample> ex(4);
  ex[0].next = {1};
  ex[1].next = {1};
  ex[2].next = {0};
  ex[3].next = {1};
  EXPECT_DOUBLE_EQ(top1_accuracy(frequency_baseline(stats, 0), ex), 0.75);
}

TEST(Predictor, JsonRoundTrip) {
  const auto mlp = PredictorMLP::random(4, 3, 2, 9);
  const auto back = predictor_from_json(to_json(mlp));
  EXPECT_EQ(back.w1, mlp.w1);
  EXPECT_EQ(back.b2, mlp.b2);
  EXPECT_EQ(back.hidden_dim, 3);
  auto bad = to_json(mlp);
  bad["w1"].erase(0);
  EXPECT_THROW(predictor_from_json(bad), SchemaError);
}

}  // namespace
}  // namespace moesim
