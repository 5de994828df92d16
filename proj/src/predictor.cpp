// Copyright (c) The moesim Authors.
// SPDX-License-Identifier: Apache-2.0

#include "moesim/predictor.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "moesim/error.hpp"

namespace moesim {

namespace {

struct Activations {
  std::vector<double> z1;
  std::vector<double> a1;
  std::vector<double> p;
};

void check_dims(const PredictorMLP& m) {
  const auto h = static_cast<std::size_t>(m.hidden_dim);
  const auto i = static_cast<std::size_t>(m.in_dim);
  const auto o = static_cast<std::size_t>(m.out_dim);
  if (m.w1.size() != h * i || m.b1.size() != h || m.w2.size() != o * h ||
      m.b2.size() != o) {
    throw SchemaError("predictor weights do not match declared dimensions");
  }
}

Activations forward(const PredictorMLP& m, std::span<const double> x) {
  if (static_cast<int>(x.size()) != m.in_dim) {
    throw SchemaError("predictor input has " + std::to_string(x.size()) +
                      " entries, expected " + std::to_string(m.in_dim));
  }
  Activations act;
  act.z1.resize(m.hidden_dim);
  act.a1.resize(m.hidden_dim);
  for (int h = 0; h < m.hidden_dim; ++h) {
    const double* row = &m.w1[static_cast<std::size_t>(h) * m.in_dim];
    double s = m.b1[h];
    for (int i = 0; i < m.in_dim; ++i) {
      if (x[i] != 0) s += row[i] * x[i];
    }
    act.z1[h] = s;
    act.a1[h] = s > 0 ? s : 0.0;
  }
  act.p.resize(m.out_dim);
  for (int o = 0; o < m.out_dim; ++o) {
    const double* row = &m.w2[static_cast<std::size_t>(o) * m.hidden_dim];
    double s = m.b2[o];
    for (int h = 0; h < m.hidden_dim; ++h) s += row[h] * act.a1[h];
    act.p[o] = s;
  }
  const double hi = *std::max_element(act.p.begin(), act.p.end());
  double z = 0;
  for (double& v : act.p) {
    v = std::exp(v - hi);
    z += v;
  }
  for (double& v : act.p) v /= z;
  return act;
}

// Accumulates scale * gradient into `grad` (same layout as the MLP).
void backward(const PredictorMLP& m, std::span<const double> x,
              std::span<const double> target, const Activations& act,
              PredictorMLP& grad, double scale) {
  double tsum = 0;
  for (double t : target) tsum += t;
  std::vector<double> dz2(m.out_dim);
  for (int o = 0; o < m.out_dim; ++o) dz2[o] = act.p[o] * tsum - target[o];
  std::vector<double> da(m.hidden_dim, 0.0);
  for (int o = 0; o < m.out_dim; ++o) {
    const double g = dz2[o];
    grad.b2[o] += scale * g;
    const std::size_t base = static_cast<std::size_t>(o) * m.hidden_dim;
    for (int h = 0; h < m.hidden_dim; ++h) {
      grad.w2[base + h] += scale * g * act.a1[h];
      da[h] += m.w2[base + h] * g;
    }
  }
  for (int h = 0; h < m.hidden_dim; ++h) {
    if (act.z1[h] <= 0) continue;
    const double g = da[h];
    grad.b1[h] += scale * g;
    const std::size_t base = static_cast<std::size_t>(h) * m.in_dim;
    for (int i = 0; i < m.in_dim; ++i) {
      if (x[i] != 0) grad.w1[base + i] += scale * g * x[i];
    }
  }
}

std::vector<double> target_of(const PredictorExample& ex, int experts) {
  std::vector<double> t(experts, 0.0);
  for (int e : ex.next) t.at(e) += 1.0 / static_cast<double>(ex.next.size());
  return t;
}

int argmax(std::span<const double> v) {
  return static_cast<int>(std::max_element(v.begin(), v.end()) - v.begin());
}

bool hit(int guess, const PredictorExample& ex) {
  return std::find(ex.next.begin(), ex.next.end(), guess) != ex.next.end();
}

}  // namespace

PredictorMLP PredictorMLP::zeros(int in_dim, int hidden_dim, int out_dim) {
  if (in_dim <= 0 || hidden_dim <= 0 || out_dim <= 0) {
    throw ConfigError("predictor dimensions must be positive");
  }
  PredictorMLP m;
  m.in_dim = in_dim;
  m.hidden_dim = hidden_dim;
  m.out_dim = out_dim;
  m.w1.assign(static_cast<std::size_t>(hidden_dim) * in_dim, 0.0);
  m.b1.assign(hidden_dim, 0.0);
  m.w2.assign(static_cast<std::size_t>(out_dim) * hidden_dim, 0.0);
  m.b2.assign(out_dim, 0.0);
  return m;
}

PredictorMLP PredictorMLP::random(int in_dim, int hidden_dim, int out_dim,
                                  std::uint64_t seed) {
  PredictorMLP m = zeros(in_dim, hidden_dim, out_dim);
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> n1(0.0, std::sqrt(2.0 / in_dim));
  std::normal_distribution<double> n2(0.0, std::sqrt(1.0 / hidden_dim));
  for (double& w : m.w1) w = n1(rng);
  for (double& w : m.w2) w = n2(rng);
  return m;
}

std::vector<double> predictor_input(std::span<const int> selection, int experts,
                                    std::span<const double> embedding,
                                    std::span<const double> context) {
  std::vector<double> x(experts + embedding.size() + context.size(), 0.0);
  for (int e : selection) {
    if (e < 0 || e >= experts) throw SchemaError("selected expert out of range");
    x[e] = 1.0;
  }
  std::copy(embedding.begin(), embedding.end(), x.begin() + experts);
  std::copy(context.begin(), context.end(),
            x.begin() + experts + static_cast<std::ptrdiff_t>(embedding.size()));
  return x;
}

std::vector<double> predictor_forward(const PredictorMLP& mlp,
                                      std::span<const double> x) {
  check_dims(mlp);
  return forward(mlp, x).p;
}

std::vector<double> predict_next_layer(const PredictorMLP& mlp,
                                       std::span<const int> selection,
                                       std::span<const double> embedding,
                                       std::span<const double> context) {
  const int experts = mlp.in_dim - static_cast<int>(embedding.size() + context.size());
  if (experts <= 0) throw SchemaError("predictor input layout mismatch");
  return predictor_forward(mlp, predictor_input(selection, experts, embedding, context));
}

double predictor_loss(const PredictorMLP& mlp, std::span<const double> x,
                      std::span<const double> target) {
  check_dims(mlp);
  if (static_cast<int>(target.size()) != mlp.out_dim) {
    throw SchemaError("predictor target size mismatch");
  }
  const auto act = forward(mlp, x);
  double loss = 0;
  for (int o = 0; o < mlp.out_dim; ++o) {
    if (target[o] > 0) loss -= target[o] * std::log(std::max(act.p[o], 1e-300));
  }
  return loss;
}

PredictorMLP predictor_gradient(const PredictorMLP& mlp, std::span<const double> x,
                                std::span<const double> target) {
  check_dims(mlp);
  if (static_cast<int>(target.size()) != mlp.out_dim) {
    throw SchemaError("predictor target size mismatch");
  }
  PredictorMLP grad = PredictorMLP::zeros(mlp.in_dim, mlp.hidden_dim, mlp.out_dim);
  backward(mlp, x, target, forward(mlp, x), grad, 1.0);
  return grad;
}

std::vector<PredictorExample> transition_examples(const RoutingTrace& trace,
                                                  int layer) {
  if (layer < 0 || layer + 1 >= trace.moe_layers) {
    throw InputDomainError("no consecutive MoE layer after layer " +
                           std::to_string(layer));
  }
  std::vector<PredictorExample> out;
  out.reserve(trace.tokens.size());
  for (const auto& tok : trace.tokens) {
    PredictorExample ex;
    ex.x = predictor_input(tok.layers[layer].experts, trace.experts_per_layer,
                           tok.embedding, tok.context);
    ex.next = tok.layers[layer + 1].experts;
    out.push_back(std::move(ex));
  }
  return out;
}

double top1_accuracy(const PredictorMLP& mlp,
                     std::span<const PredictorExample> examples) {
  if (examples.empty()) return 0.0;
  std::size_t hits = 0;
  for (const auto& ex : examples) hits += hit(argmax(predictor_forward(mlp, ex.x)), ex);
  return static_cast<double>(hits) / static_cast<double>(examples.size());
}

double top1_accuracy(std::span<const double> fixed_prediction,
                     std::span<const PredictorExample> examples) {
  if (examples.empty()) return 0.0;
  const int guess = argmax(fixed_prediction);
  std::size_t hits = 0;
  for (const auto& ex : examples) hits += hit(guess, ex);
  return static_cast<double>(hits) / static_cast<double>(examples.size());
}

TrainedPredictor train_predictor(std::span<const PredictorExample> examples,
                                 int experts, const TrainingConfig& config) {
  if (examples.empty()) throw InputDomainError("predictor training set is empty");
  if (!(config.learning_rate > 0) || config.epochs < 0 ||
      !(config.holdout >= 0 && config.holdout < 1)) {
    throw ConfigError("invalid predictor training config");
  }
  const auto n = examples.size();
  auto n_val = static_cast<std::size_t>(std::floor(config.holdout * static_cast<double>(n)));
  if (n_val == n) n_val = n - 1;
  const auto n_train = n - n_val;
  const int in_dim = static_cast<int>(examples.front().x.size());

  TrainedPredictor out;
  out.mlp = PredictorMLP::random(in_dim, config.hidden_dim, experts, config.seed);
  std::mt19937_64 rng(config.seed ^ 0x9e3779b97f4a7c15ULL);
  std::vector<std::size_t> order(n_train);
  std::iota(order.begin(), order.end(), 0);
  PredictorMLP grad = PredictorMLP::zeros(in_dim, config.hidden_dim, experts);
  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    for (std::size_t idx : order) {
      const auto& ex = examples[idx];
      const auto target = target_of(ex, experts);
      // In-place step: the gradient buffer holds -lr * grad for this example.
      std::fill(grad.w1.begin(), grad.w1.end(), 0.0);
      std::fill(grad.b1.begin(), grad.b1.end(), 0.0);
      std::fill(grad.w2.begin(), grad.w2.end(), 0.0);
      std::fill(grad.b2.begin(), grad.b2.end(), 0.0);
      backward(out.mlp, ex.x, target, forward(out.mlp, ex.x), grad,
               -config.learning_rate);
      for (std::size_t i = 0; i < grad.w1.size(); ++i) out.mlp.w1[i] += grad.w1[i];
      for (std::size_t i = 0; i < grad.b1.size(); ++i) out.mlp.b1[i] += grad.b1[i];
      for (std::size_t i = 0; i < grad.w2.size(); ++i) out.mlp.w2[i] += grad.w2[i];
      for (std::size_t i = 0; i < grad.b2.size(); ++i) out.mlp.b2[i] += grad.b2[i];
    }
  }
  out.train_accuracy = top1_accuracy(out.mlp, examples.subspan(0, n_train));
  out.validation_accuracy =
      n_val > 0 ? top1_accuracy(out.mlp, examples.subspan(n_train)) : out.train_accuracy;
  return out;
}

TrainedPredictor train_predictor(const RoutingTrace& trace, int layer,
                                 const TrainingConfig& config) {
  if (trace.tokens.empty()) throw InputDomainError("predictor training trace is empty");
  const auto examples = transition_examples(trace, layer);
  return train_predictor(examples, trace.experts_per_layer, config);
}

std::vector<double> frequency_baseline(const ActivationStats& stats, int layer) {
  if (layer + 1 >= stats.layers()) {
    throw InputDomainError("frequency baseline needs stats for the next layer");
  }
  return stats.freqs(layer + 1);
}

nlohmann::json to_json(const PredictorMLP& m) {
  return {{"in_dim", m.in_dim}, {"hidden_dim", m.hidden_dim}, {"out_dim", m.out_dim},
          {"w1", m.w1},         {"b1", m.b1},                 {"w2", m.w2},
          {"b2", m.b2}};
}

PredictorMLP predictor_from_json(const nlohmann::json& doc) {
  try {
    PredictorMLP m;
    m.in_dim = doc.at("in_dim").get<int>();
    m.hidden_dim = doc.at("hidden_dim").get<int>();
    m.out_dim = doc.at("out_dim").get<int>();
    m.w1 = doc.at("w1").get<std::vector<double>>();
    m.b1 = doc.at("b1").get<std::vector<double>>();
    m.w2 = doc.at("w2").get<std::vector<double>>();
    m.b2 = doc.at("b2").get<std::vector<double>>();
    check_dims(m);
    return m;
  } catch (const nlohmann::json::exception& e) {
    throw SchemaError(std::string("malformed predictor document: ") + e.what());
  }
}

}  // namespace moesim
