// Copyright (c) The moesim Authors.
// SPDX-License-Identifier: Apache-2.0

#include <atomic>
#include <cstdio>
#include <exception>
#include <thread>

#include "moesim/error.hpp"
#include "moesim/simulator.hpp"

namespace moesim {

namespace {

std::string num(double x) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", x);
  return buf;
}

std::string csv_escape(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + "\"";
}

}  // namespace

nlohmann::json to_json(const SimReport& r) {
  return {
      {"scenario", r.scenario},
      {"method", r.method},
      {"seed", r.seed},
      {"feasible", r.feasible},
      {"infeasible_reason", r.infeasible_reason},
      {"variant", r.variant},
      {"final_variant", r.final_variant},
      {"tokens", r.tokens},
      {"budget", r.budget},
      {"deploy_footprint", r.deploy_footprint},
      {"total_latency", r.total_latency},
      {"comp_latency", r.comp_latency},
      {"comm_latency", r.comm_latency},
      {"predictor_latency", r.predictor_latency},
      {"adjust_latency", r.adjust_latency},
      {"mean_token_latency", r.mean_token_latency},
      {"peak_mem", r.peak_mem},
      {"avg_mem", r.avg_mem},
      {"expert_load_count", r.expert_load_count},
      {"comm_volume", r.comm_volume},
      {"demand_fetches", r.demand_fetches},
      {"prefetches", r.prefetches},
      {"offloaded_demands", r.offloaded_demands},
      {"device_hits", r.device_hits},
      {"hit_rate", r.hit_rate},
      {"substitution_count", r.substitution_count},
      {"mean_substitution_penalty", r.mean_substitution_penalty},
      {"throughput", r.throughput},
      {"pmr", r.pmr},
      {"failure_count", r.failure_count},
      {"switch_count", r.switch_count},
      {"predictor_fraction", r.predictor_fraction},
      {"adjust_fraction", r.adjust_fraction},
      {"granularity_target_min", r.granularity_target_min},
      {"perf_model_updates", r.perf_model_updates},
      {"perf_model_rel_error", r.perf_model_rel_error},
      {"predictor_accuracy", r.predictor_accuracy},
  };
}

// Append-only: new metrics go at the end so existing consumers keep working.
const std::vector<std::string>& csv_columns() {
  static const std::vector<std::string> cols{
      "scenario",           "method",           "seed",
      "feasible",           "variant",          "final_variant",
      "tokens",             "budget",           "deploy_footprint",
      "total_latency",      "comp_latency",     "comm_latency",
      "predictor_latency",  "adjust_latency",   "mean_token_latency",
      "peak_mem",           "avg_mem",          "expert_load_count",
      "comm_volume",        "demand_fetches",   "prefetches",
      "offloaded_demands",  "device_hits",      "hit_rate",
      "substitution_count", "mean_substitution_penalty",
      "throughput",         "pmr",              "failure_count",
      "switch_count",       "predictor_fraction", "adjust_fraction",
      "granularity_target_min", "perf_model_updates", "perf_model_rel_error",
      "predictor_accuracy"};
  return cols;
}

std::string csv_row(const SimReport& r) {
  const auto j = to_json(r);
  std::string out;
  for (const auto& c : csv_columns()) {
    if (!out.empty()) out += ',';
    const auto& v = j.at(c);
    if (v.is_string()) {
      out += csv_escape(v.get<std::string>());
    } else if (v.is_boolean()) {
      out += v.get<bool>() ? "1" : "0";
    } else if (v.is_number_float()) {
      out += num(v.get<double>());
    } else {
      out += v.dump();
    }
  }
  return out;
}

SweepSpec sweep_from_json(const nlohmann::json& doc) {
  if (!doc.is_object()) throw ConfigError("sweep spec must be an object");
  SweepSpec spec;
  for (const auto& [k, v] : doc.items()) {
    if (k != "axes" && k != "seeds") throw ConfigError("unknown sweep key '" + k + "'");
  }
  if (doc.contains("axes")) {
    for (const auto& a : doc.at("axes")) {
      if (!a.is_object() || !a.contains("path") || !a.contains("values") ||
          !a.at("values").is_array() || a.at("values").empty()) {
        throw ConfigError("sweep axis needs 'path' and non-empty 'values'");
      }
      spec.axes.push_back({a.at("path").get<std::string>(),
                           a.at("values").get<std::vector<nlohmann::json>>()});
    }
  }
  if (doc.contains("seeds")) {
    const auto& s = doc.at("seeds");
    if (s.is_number_unsigned()) {
      for (std::uint64_t i = 1; i <= s.get<std::uint64_t>(); ++i) spec.seeds.push_back(i);
    } else if (s.is_array()) {
      spec.seeds = s.get<std::vector<std::uint64_t>>();
    } else {
      throw ConfigError("sweep 'seeds' must be a count or an array");
    }
  }
  return spec;
}

std::vector<SweepRow> run_sweep(const nlohmann::json& scenario_doc, const SweepSpec& spec,
                                unsigned threads, const std::string& base_dir) {
  // Expand the product in row-major order, last axis fastest.
  std::vector<std::vector<std::size_t>> combos{{}};
  for (const auto& axis : spec.axes) {
    std::vector<std::vector<std::size_t>> next;
    for (const auto& c : combos) {
      for (std::size_t i = 0; i < axis.values.size(); ++i) {
        auto e = c;
        e.push_back(i);
        next.push_back(std::move(e));
      }
    }
    combos = std::move(next);
  }
  const auto seeds = spec.seeds.empty()
                         ? std::vector<std::uint64_t>{scenario_doc.value("seed", std::uint64_t{1})}
                         : spec.seeds;

  struct Job {
    Scenario scenario;
    std::vector<std::string> labels;
  };
  std::vector<Job> jobs;
  for (const auto& c : combos) {
    for (auto seed : seeds) {
      nlohmann::json doc = scenario_doc;
      Job job;
      for (std::size_t a = 0; a < c.size(); ++a) {
        const auto& v = spec.axes[a].values[c[a]];
        set_path(doc, spec.axes[a].path, v);
        job.labels.push_back(v.is_string() ? v.get<std::string>() : v.dump());
      }
      doc["seed"] = seed;
      job.scenario = scenario_from_json(doc);
      job.scenario.base_dir = base_dir;
      jobs.push_back(std::move(job));
    }
  }

  std::vector<SweepRow> rows(jobs.size());
  std::vector<std::exception_ptr> errors(jobs.size());
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t i; (i = next.fetch_add(1)) < jobs.size();) {
      try {
        rows[i] = {jobs[i].labels, run_inference(jobs[i].scenario)};
      } catch (...) {
        errors[i] = std::current_exception();
      }
    }
  };
  const unsigned n = std::max(1u, std::min<unsigned>(threads, static_cast<unsigned>(jobs.size())));
  std::vector<std::jthread> pool;
  for (unsigned t = 1; t < n; ++t) pool.emplace_back(worker);
  worker();
  pool.clear();
  for (const auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
  return rows;
}

}  // namespace moesim
