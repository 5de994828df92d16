// Copyright (c) The moesim Authors.
// SPDX-License-Identifier: Apache-2.0

#include "moesim/resource.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <random>
#include <set>

#include "moesim/error.hpp"

namespace moesim {

namespace {

struct FieldEntry {
  const char* name;
  double ResourceSample::*member;
};

constexpr FieldEntry kFields[] = {
    {"time", &ResourceSample::time},
    {"gpu_compute", &ResourceSample::gpu_compute},
    {"cpu_compute", &ResourceSample::cpu_compute},
    {"gpu_util", &ResourceSample::gpu_util},
    {"cpu_util", &ResourceSample::cpu_util},
    {"gpu_mem_total", &ResourceSample::gpu_mem_total},
    {"cpu_mem_total", &ResourceSample::cpu_mem_total},
    {"gpu_mem_used", &ResourceSample::gpu_mem_used},
    {"cpu_mem_used", &ResourceSample::cpu_mem_used},
    {"bw_gpu_cpu", &ResourceSample::bw_gpu_cpu},
    {"bw_net", &ResourceSample::bw_net},
    {"lat_gpu_cpu", &ResourceSample::lat_gpu_cpu},
    {"lat_net", &ResourceSample::lat_net},
};

double ResourceSample::*member_of(std::string_view name) {
  for (const auto& f : kFields) {
    if (name == f.name) return f.member;
  }
  throw SchemaError("unknown resource field '" + std::string(name) + "'");
}

// Clamps a sample into the ResourceSample invariants.
void clamp_invariants(ResourceSample& s) {
  for (const auto& f : kFields) {
    s.*f.member = std::max(0.0, s.*f.member);
  }
  s.gpu_util = std::min(1.0, s.gpu_util);
  s.cpu_util = std::min(1.0, s.cpu_util);
  s.gpu_mem_used = std::min(s.gpu_mem_used, s.gpu_mem_total);
  s.cpu_mem_used = std::min(s.cpu_mem_used, s.cpu_mem_total);
}

}  // namespace

const std::vector<std::string>& resource_field_names() {
  static const std::vector<std::string> names = [] {
    std::vector<std::string> out;
    for (const auto& f : kFields) out.emplace_back(f.name);
    return out;
  }();
  return names;
}

double get_field(const ResourceSample& s, std::string_view name) {
  return s.*member_of(name);
}

void set_field(ResourceSample& s, std::string_view name, double value) {
  s.*member_of(name) = value;
}

bool is_resource_field(std::string_view name) {
  return std::any_of(std::begin(kFields), std::end(kFields),
                     [&](const FieldEntry& f) { return name == f.name; });
}

void validate(const ResourceSample& s) {
  for (const auto& f : kFields) {
    const double v = s.*f.member;
    if (std::isnan(v) || v < 0) {
      throw InputDomainError(std::string("resource field ") + f.name +
                             " must be nonnegative");
    }
  }
  if (s.gpu_util > 1 || s.cpu_util > 1) {
    throw InputDomainError("utilization must lie in [0,1]");
  }
  if (s.gpu_mem_used > s.gpu_mem_total || s.cpu_mem_used > s.cpu_mem_total) {
    throw InputDomainError("used memory exceeds total memory");
  }
}

SmoothedResource SmoothedResource::start(double first_sample, double alpha,
                                         std::size_t window) {
  if (!(alpha > 0 && alpha <= 1)) {
    throw ConfigError("EWMA alpha must lie in (0,1]");
  }
  if (window == 0) throw ConfigError("EWMA window must be positive");
  if (!std::isfinite(first_sample)) {
    throw InputDomainError("non-finite resource sample");
  }
  SmoothedResource r;
  r.alpha_ = alpha;
  r.capacity_ = window;
  r.value_ = first_sample;
  r.window_.push_back(first_sample);
  r.seen_ = 1;
  r.recompute_spread();
  return r;
}

void SmoothedResource::recompute_spread() {
  // Population deviation of the window against the smoothed value, not the
  // window mean. During warm-up the divisor is the number of samples held.
  double acc = 0;
  for (double x : window_) acc += (x - value_) * (x - value_);
  stddev_ = std::sqrt(acc / static_cast<double>(window_.size()));
  if (value_ > 0) {
    stability_ = std::clamp(1.0 - stddev_ / value_, 0.0, 1.0);
  } else {
    stability_ = 0;
  }
}

SmoothedResource ewma_update(const SmoothedResource& prev, double sample) {
  if (!std::isfinite(sample)) {
    throw InputDomainError("non-finite resource sample");
  }
  SmoothedResource next = prev;
  next.value_ = prev.alpha_ * sample + (1.0 - prev.alpha_) * prev.value_;
  next.window_.push_back(sample);
  while (next.window_.size() > next.capacity_) next.window_.pop_front();
  ++next.seen_;
  next.recompute_spread();
  return next;
}

HeterogeneityReport heterogeneity(std::span<const DeviceProfile> devices) {
  if (devices.size() < 2) {
    throw InputDomainError("heterogeneity needs at least two devices");
  }
  const auto& weights = devices.front().dimension_weights;
  double weight_sum = 0;
  for (const auto& [name, w] : weights) {
    if (w < 0) throw ConfigError("dimension weight '" + name + "' is negative");
    weight_sum += w;
  }
  if (std::abs(weight_sum - 1.0) > 1e-9) {
    throw ConfigError("dimension weights must sum to 1");
  }
  for (const auto& d : devices) {
    if (d.dimension_weights.size() != weights.size()) {
      throw SchemaError("devices do not share dimension weights");
    }
    for (const auto& [name, w] : weights) {
      auto it = d.dimension_weights.find(name);
      if (it == d.dimension_weights.end() || std::abs(it->second - w) > 1e-12) {
        throw SchemaError("devices do not share dimension weights");
      }
    }
    if (d.metric_values.size() != weights.size()) {
      throw SchemaError("device '" + d.device_id +
                        "' metric set does not match the weighted dimensions");
    }
    for (const auto& [name, v] : d.metric_values) {
      if (!weights.contains(name)) {
        throw SchemaError("device '" + d.device_id + "' has unknown metric '" +
                          name + "'");
      }
      if (!(v >= 0)) {
        throw InputDomainError("metric '" + name + "' of device '" +
                               d.device_id + "' is negative");
      }
    }
  }

  const std::size_t n = devices.size();
  HeterogeneityReport report;
  report.matrix.assign(n, std::vector<double>(n, 0.0));
  report.scores.assign(n, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i + 1; j < n; ++j) {
      double d = 0;
      for (const auto& [name, w] : weights) {
        const double a = devices[i].metric_values.at(name);
        const double b = devices[j].metric_values.at(name);
        const double hi = std::max(a, b);
        if (hi > 0) d += w * std::abs(a - b) / hi;
      }
      report.matrix[i][j] = d;
      report.matrix[j][i] = d;
    }
  }
  for (std::size_t i = 0; i < n; ++i) {
    double sum = 0;
    for (std::size_t j = 0; j < n; ++j) {
      if (j != i) sum += report.matrix[i][j];
    }
    report.scores[i] = sum / static_cast<double>(n - 1);
  }
  return report;
}

DeviceProfile profile_from_sample(std::string id, const ResourceSample& s) {
  DeviceProfile p;
  p.device_id = std::move(id);
  p.metric_values = {{"gpu_compute", s.gpu_compute},
                     {"gpu_mem_total", s.gpu_mem_total},
                     {"bw_gpu_cpu", s.bw_gpu_cpu},
                     {"bw_net", s.bw_net}};
  for (const auto& [name, v] : p.metric_values) {
    (void)v;
    p.dimension_weights[name] = 0.25;
  }
  return p;
}

std::vector<ResourceSample> generate_trace(const ResourceTraceSpec& spec) {
  if (spec.length == 0) throw ConfigError("trace length must be positive");
  for (const auto& [name, model] : spec.models) {
    if (!is_resource_field(name) || name == "time") {
      throw ConfigError("cannot model resource field '" + name + "'");
    }
    if (const auto* rw = std::get_if<fluct::RandomWalk>(&model)) {
      if (rw->lower > rw->upper) {
        throw ConfigError("random-walk bounds inverted for '" + name + "'");
      }
      if (rw->step_stddev < 0) {
        throw ConfigError("random-walk step must be nonnegative");
      }
    }
    if (const auto* sn = std::get_if<fluct::Sinusoid>(&model)) {
      if (!(sn->period > 0)) throw ConfigError("sinusoid period must be positive");
    }
  }

  std::mt19937_64 rng(spec.seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::map<std::string, double> walk_state;
  for (const auto& [name, model] : spec.models) {
    if (const auto* rw = std::get_if<fluct::RandomWalk>(&model)) {
      walk_state[name] =
          std::clamp(get_field(spec.base, name), rw->lower, rw->upper);
    }
  }

  std::vector<ResourceSample> out;
  out.reserve(spec.length);
  for (std::size_t t = 0; t < spec.length; ++t) {
    ResourceSample s = spec.base;
    s.time = static_cast<double>(t);
    // std::map iteration order keeps the RNG draw sequence fixed.
    for (const auto& [name, model] : spec.models) {
      const double base = get_field(spec.base, name);
      double v = base;
      std::visit(
          [&](const auto& m) {
            using M = std::decay_t<decltype(m)>;
            if constexpr (std::is_same_v<M, fluct::Sinusoid>) {
              v = base + m.amplitude *
                             std::sin(2.0 * M_PI * static_cast<double>(t) /
                                      m.period);
            } else if constexpr (std::is_same_v<M, fluct::RandomWalk>) {
              double& cur = walk_state[name];
              if (t > 0) cur += m.step_stddev * normal(rng);
              cur = std::clamp(cur, m.lower, m.upper);
              v = cur;
            } else if constexpr (std::is_same_v<M, fluct::StepChange>) {
              v = static_cast<double>(t) >= m.time ? m.new_value : base;
            }
          },
          model);
      set_field(s, name, v);
    }
    clamp_invariants(s);
    out.push_back(s);
  }
  return out;
}

void write_trace_csv(std::ostream& os, std::span<const ResourceSample> trace) {
  const auto& names = resource_field_names();
  for (std::size_t i = 0; i < names.size(); ++i) {
    os << (i ? "," : "") << names[i];
  }
  os << '\n';
  os << std::setprecision(17);
  for (const auto& s : trace) {
    for (std::size_t i = 0; i < names.size(); ++i) {
      os << (i ? "," : "") << get_field(s, names[i]);
    }
    os << '\n';
  }
}

}  // namespace moesim
