// Copyright (c) The moesim Authors.
// SPDX-License-Identifier: Apache-2.0

// Next-layer expert activation predictor: a two-layer MLP over
// [K-hot current selection | token embedding | context], and the
// frequency baseline it is compared against.

#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include <json.hpp>

#include "moesim/moe.hpp"

namespace moesim {

struct PredictorMLP {
  int in_dim = 0;
  int hidden_dim = 0;
  int out_dim = 0;
  std::vector<double> w1;  // hidden x in, row-major
  std::vector<double> b1;
  std::vector<double> w2;  // out x hidden, row-major
  std::vector<double> b2;

  static PredictorMLP zeros(int in_dim, int hidden_dim, int out_dim);
  static PredictorMLP random(int in_dim, int hidden_dim, int out_dim,
                             std::uint64_t seed);
};

/// K-hot indicators over `experts`, then h_t, then c_t.
std::vector<double> predictor_input(std::span<const int> selection, int experts,
                                    std::span<const double> embedding,
                                    std::span<const double> context);

/// softmax(W2 relu(W1 x + b1) + b2). Throws SchemaError on a size mismatch.
std::vector<double> predictor_forward(const PredictorMLP& mlp,
                                      std::span<const double> x);
std::vector<double> predict_next_layer(const PredictorMLP& mlp,
                                       std::span<const int> selection,
                                       std::span<const double> embedding,
                                       std::span<const double> context);

/// Cross-entropy against a target distribution over the outputs.
double predictor_loss(const PredictorMLP& mlp, std::span<const double> x,
                      std::span<const double> target);
/// Gradient of predictor_loss, laid out like the MLP parameters.
PredictorMLP predictor_gradient(const PredictorMLP& mlp, std::span<const double> x,
                                std::span<const double> target);

struct PredictorExample {
  std::vector<double> x;
  std::vector<int> next;  // experts selected at the next layer
};

/// One example per token for the transition layer -> layer + 1.
std::vector<PredictorExample> transition_examples(const RoutingTrace& trace,
                                                  int layer);

struct TrainingConfig {
  int hidden_dim = 32;
  double learning_rate = 0.05;
  int epochs = 10;
  std::uint64_t seed = 0;
  double holdout = 0.2;
};

struct TrainedPredictor {
  PredictorMLP mlp;
  double train_accuracy = 0;
  double validation_accuracy = 0;
};

/// Per-example SGD over a seeded shuffle; the last `holdout` share of the
/// examples is kept out of training for validation.
TrainedPredictor train_predictor(std::span<const PredictorExample> examples,
                                 int experts, const TrainingConfig& config);
TrainedPredictor train_predictor(const RoutingTrace& trace, int layer,
                                 const TrainingConfig& config);

/// Share of examples whose argmax prediction is among the selected experts.
double top1_accuracy(const PredictorMLP& mlp,
                     std::span<const PredictorExample> examples);
double top1_accuracy(std::span<const double> fixed_prediction,
                     std::span<const PredictorExample> examples);

/// Next layer's activation frequencies used as the prediction.
std::vector<double> frequency_baseline(const ActivationStats& stats, int layer);

nlohmann::json to_json(const PredictorMLP& mlp);
PredictorMLP predictor_from_json(const nlohmann::json& doc);

}  // namespace moesim
