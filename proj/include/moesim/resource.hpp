// Copyright (c) The moesim Authors.
// SPDX-License-Identifier: Apache-2.0

// Per-device resource state: raw samples, EWMA smoothing with a windowed
// stability score, cross-device heterogeneity and synthetic traces.

#pragma once

#include <cstdint>
#include <deque>
#include <map>
#include <ostream>
#include <span>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

namespace moesim {

/// One device snapshot. Compute in FLOPS, memory in bytes, bandwidth in
/// bytes/second, latencies in seconds, utilization as a fraction.
struct ResourceSample {
  double time = 0;
  double gpu_compute = 0;
  double cpu_compute = 0;
  double gpu_util = 0;
  double cpu_util = 0;
  double gpu_mem_total = 0;
  double cpu_mem_total = 0;
  double gpu_mem_used = 0;
  double cpu_mem_used = 0;
  double bw_gpu_cpu = 0;
  double bw_net = 0;
  double lat_gpu_cpu = 0;
  double lat_net = 0;

  double gpu_mem_avail() const { return gpu_mem_total - gpu_mem_used; }

  bool operator==(const ResourceSample&) const = default;
};

/// Field names in declaration order; also the CSV column order.
const std::vector<std::string>& resource_field_names();
double get_field(const ResourceSample& s, std::string_view name);
void set_field(ResourceSample& s, std::string_view name, double value);
bool is_resource_field(std::string_view name);

/// Throws InputDomainError when a sample breaks the nonnegativity,
/// utilization or used-memory invariants.
void validate(const ResourceSample& s);

class SmoothedResource {
 public:
  SmoothedResource() = default;

  /// r_hat(0) = r(0); the window starts with the first raw sample.
  static SmoothedResource start(double first_sample, double alpha,
                                std::size_t window);

  double value() const { return value_; }
  double alpha() const { return alpha_; }
  double stddev() const { return stddev_; }
  double stability() const { return stability_; }
  std::size_t window_capacity() const { return capacity_; }
  const std::deque<double>& window() const { return window_; }
  std::uint64_t samples_seen() const { return seen_; }

  friend SmoothedResource ewma_update(const SmoothedResource& prev,
                                      double sample);

 private:
  void recompute_spread();

  double value_ = 0;
  double alpha_ = 0.3;
  std::size_t capacity_ = 16;
  std::deque<double> window_;
  double stddev_ = 0;
  double stability_ = 0;
  std::uint64_t seen_ = 0;
};

SmoothedResource ewma_update(const SmoothedResource& prev, double sample);

struct DeviceProfile {
  std::string device_id;
  std::map<std::string, double> metric_values;
  std::map<std::string, double> dimension_weights;
};

struct HeterogeneityReport {
  std::vector<std::vector<double>> matrix;
  std::vector<double> scores;
};

/// Weighted normalized pairwise difference matrix and per-device mean
/// difference to all other devices.
HeterogeneityReport heterogeneity(std::span<const DeviceProfile> devices);

/// Builds a profile from a sample over the standard dimensions
/// (gpu_compute, gpu_mem_total, bw_gpu_cpu, bw_net) with equal weights.
DeviceProfile profile_from_sample(std::string id, const ResourceSample& s);

namespace fluct {
struct Constant {};
struct Sinusoid {
  double amplitude = 0;  // absolute, same unit as the metric
  double period = 1;     // ticks
};
struct RandomWalk {
  double step_stddev = 0;
  double lower = 0;
  double upper = 0;
};
struct StepChange {
  double time = 0;
  double new_value = 0;
};
}  // namespace fluct

using Fluctuation = std::variant<fluct::Constant, fluct::Sinusoid,
                                 fluct::RandomWalk, fluct::StepChange>;

struct ResourceTraceSpec {
  ResourceSample base;
  std::map<std::string, Fluctuation> models;
  std::uint64_t seed = 0;
  std::size_t length = 1;
};

/// Deterministic for a fixed seed. Samples are clamped to the metric's
/// declared bounds and to the ResourceSample invariants.
std::vector<ResourceSample> generate_trace(const ResourceTraceSpec& spec);

void write_trace_csv(std::ostream& os, std::span<const ResourceSample> trace);

}  // namespace moesim
