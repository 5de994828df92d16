// Copyright (c) The moesim Authors.
// SPDX-License-Identifier: Apache-2.0

// Acceptance suite: one PASS/FAIL line per criterion, exit status 1 if any
// fails. Tolerances are pinned here rather than read from configuration.

#include <chrono>
#include <cstdio>
#include <functional>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "moesim/scenario.hpp"
#include "moesim/simulator.hpp"
#include "oracles.hpp"

namespace moesim {
namespace {

constexpr double kMemRatioTarget = 0.30;
constexpr double kMemRatioTol = 0.05;
constexpr double kMemRatioSeconds = 60;
constexpr int kLatencySeeds = 10;
constexpr double kLatencyDeviceMem = 4e9;
constexpr double kLatencyMargin = 0.05;
constexpr double kSignAlpha = 0.05;
constexpr double kTheorem1Seconds = 10;
constexpr std::size_t kTheorem2Seeds = 50;
constexpr double kTheorem2Fraction = 0.9;
constexpr double kTheorem2Seconds = 120;
constexpr int kFusionCases = 1000;
constexpr double kGradientTol = 1e-4;
constexpr double kPredictorGap = 0.10;
constexpr std::uint64_t kFuzzEvents = 100000;
constexpr int kEvictTrials = 2000;
constexpr double kOverheadCap = 0.05;

struct Verdict {
  bool pass = false;
  std::string detail;
};

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

// Shared by the memory-ratio and overhead criteria.
struct LargeModelRun {
  SimReport comoe;
  SimReport original;
  double seconds = 0;
};

const LargeModelRun& large_model_run() {
  static const LargeModelRun run = [] {
    const auto t0 = std::chrono::steady_clock::now();
    LargeModelRun r;
    r.comoe = run_inference(default_scenario(Method::CoMoE, "sb128"));
    // The uncompressed model needs a device large enough to hold it.
    auto o = default_scenario(Method::Original, "sb128");
    o.resources.base.gpu_mem_total = 64e9;
    r.original = run_inference(o);
    r.seconds = seconds_since(t0);
    return r;
  }();
  return run;
}

struct PairedLatency {
  std::vector<SimReport> comoe;
  std::vector<SimReport> offload;
};

const PairedLatency& paired_latency() {
  static const PairedLatency runs = [] {
    PairedLatency p;
    for (int seed = 1; seed <= kLatencySeeds; ++seed) {
      auto a = default_scenario(Method::CoMoE, "sb32");
      auto b = default_scenario(Method::EOffload, "sb32");
      a.seed = b.seed = static_cast<std::uint64_t>(seed);
      a.resources.base.gpu_mem_total = b.resources.base.gpu_mem_total = kLatencyDeviceMem;
      p.comoe.push_back(run_inference(a));
      p.offload.push_back(run_inference(b));
    }
    return p;
  }();
  return runs;
}

Verdict memory_ratio() {
  const auto& r = large_model_run();
  if (!r.comoe.feasible || !r.original.feasible) {
    return {false, "deployment infeasible: " + r.comoe.infeasible_reason +
                       r.original.infeasible_reason};
  }
  const double ratio = r.comoe.peak_mem / r.original.peak_mem;
  const bool ok = std::abs(ratio - kMemRatioTarget) <= kMemRatioTol && r.seconds < kMemRatioSeconds;
  return {ok, fmt("sb128 peak %.2f GB (%s) / original %.2f GB = %.3f, target %.2f +- %.2f, %.1f s",
                  r.comoe.peak_mem / 1e9, r.comoe.variant.c_str(), r.original.peak_mem / 1e9,
                  ratio, kMemRatioTarget, kMemRatioTol, r.seconds)};
}

Verdict latency_ordering() {
  const auto& p = paired_latency();
  double sum_c = 0, sum_o = 0;
  std::uint64_t faster = 0;
  for (int i = 0; i < kLatencySeeds; ++i) {
    if (!p.comoe[i].feasible || !p.offload[i].feasible) return {false, "infeasible run"};
    sum_c += p.comoe[i].total_latency;
    sum_o += p.offload[i].total_latency;
    faster += p.comoe[i].total_latency < p.offload[i].total_latency;
  }
  const double mean_c = sum_c / kLatencySeeds, mean_o = sum_o / kLatencySeeds;
  const double margin = 1 - mean_c / mean_o;
  const double pval = binomial_upper_tail(faster, kLatencySeeds);
  const bool ok = mean_c < mean_o && margin >= kLatencyMargin && pval < kSignAlpha;
  return {ok, fmt("sb32 on %.0f GB: mean total latency %.3f s vs offload-only %.3f s, margin %.1f%% (need "
                  ">= %.0f%%), faster on %llu/%d seeds, sign test p = %.2g",
                  kLatencyDeviceMem / 1e9, mean_c, mean_o, 100 * margin, 100 * kLatencyMargin,
                  static_cast<unsigned long long>(faster), kLatencySeeds, pval)};
}

Verdict theorem1() {
  const auto t0 = std::chrono::steady_clock::now();
  const Theorem1Params q;  // mu 8 GB, sigma 2 GB, 1e5 trials, 99% confidence
  const auto r = theorem1_harness(q);
  const double secs = seconds_since(t0);
  const bool ok = r.pass && q.trials == 100000 && r.dynamic_rate <= r.fixed_rate &&
                  secs < kTheorem1Seconds;
  return {ok, fmt("%llu trials: fixed failure %.4f (E=%d), dynamic %.5f, one-sided p = %.3g, %.2f s",
                  static_cast<unsigned long long>(q.trials), r.fixed_rate, r.e_fixed,
                  r.dynamic_rate, r.p_value, secs)};
}

Verdict theorem2() {
  const auto t0 = std::chrono::steady_clock::now();
  Theorem2Params q;
  q.seeds = kTheorem2Seeds;
  q.required_fraction = kTheorem2Fraction;
  const auto r = theorem2_harness(theorem2_scenario(), q);
  const double secs = seconds_since(t0);
  const bool ok = r.ordering_fraction >= kTheorem2Fraction && r.hit_fraction >= kTheorem2Fraction &&
                  secs < kTheorem2Seconds;
  return {ok, fmt("%zu seeds: latency ordering %.2f, hit-rate ordering %.2f (need >= %.2f); "
                  "mean none %.4f s, fixed %.4f s, dynamic %.4f s, %.1f s",
                  q.seeds, r.ordering_fraction, r.hit_fraction, kTheorem2Fraction, r.mean_none,
                  r.mean_fixed, r.mean_dynamic, secs)};
}

Verdict deployability() {
  // Rows sb8, sb32, sb64, sb128, sb256; columns original, msmoe, eoffload, comoe.
  const char* presets[] = {"sb8", "sb32", "sb64", "sb128", "sb256"};
  const Method methods[] = {Method::Original, Method::MSMoE, Method::EOffload, Method::CoMoE};
  const char* expected_8gb[] = {"YYYY", "nYYY", "nYYY", "nYYY", "nnnn"};
  const char* expected_4gb[] = {"YYYY", "nYYY", "nYnY", "nnnn", "nnnn"};
  int wrong = 0;
  std::string table;
  for (const auto& [mem, expected] :
       {std::pair{8e9, expected_8gb}, std::pair{4e9, expected_4gb}}) {
    table += fmt(" %.0fGB[", mem / 1e9);
    for (int row = 0; row < 5; ++row) {
      for (int col = 0; col < 4; ++col) {
        auto s = default_scenario(methods[col], presets[row]);
        s.resources.base.gpu_mem_total = mem;
        s.workload.tokens = 8;
        s.workload.history_tokens = 200;
        const bool got = run_inference(s).feasible;
        table += got ? 'Y' : 'n';
        wrong += got != (expected[row][col] == 'Y');
      }
      if (row < 4) table += ' ';
    }
    table += ']';
  }
  return {wrong == 0, fmt("%d of 40 cells differ;%s", wrong, table.c_str())};
}

Verdict fusion_math() {
  const auto t = oracle::fusion_properties(kFusionCases, 2024);
  return {t.ok() && t.cases == kFusionCases,
          fmt("%llu randomized layers, %llu mismatches%s%s",
              static_cast<unsigned long long>(t.cases), static_cast<unsigned long long>(t.failures),
              t.ok() ? "" : ", first: ", t.first.c_str())};
}

Verdict predictor() {
  double grad = 0;
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    grad = std::max(grad, oracle::predictor_gradient_error(seed));
  }
  const auto exact = oracle::predictor_gap(1.0, 5, 50);
  const auto noisy = oracle::predictor_gap(0.9, 6, 30);
  const bool ok = grad < kGradientTol && exact.predictor == 1.0 &&
                  noisy.predictor - noisy.baseline >= kPredictorGap;
  return {ok, fmt("max gradient error %.2g (< %.0e); Top-1 at rho=1 %.3f; rho=0.9 held-out %.3f "
                  "vs frequency %.3f (+%.1f pp, need %.0f)",
                  grad, kGradientTol, exact.predictor, noisy.predictor, noisy.baseline,
                  100 * (noisy.predictor - noisy.baseline), 100 * kPredictorGap)};
}

Verdict cache_safety() {
  const auto fuzz = oracle::cache_fuzz(kFuzzEvents, 77);
  const auto ev = oracle::evict_oracle(kEvictTrials, 13);
  // The simulator's own tier checks under prefetching and eviction pressure.
  auto s = default_scenario(Method::CoMoE, "sb64");
  s.resources.base.gpu_mem_total = 4e9;
  s.workload.tokens = 128;
  s.workload.history_tokens = 500;
  RunOptions opts;
  opts.check_invariants = true;
  std::string sim_error;
  try {
    simulate(prepare(s), opts);
  } catch (const Error& e) {
    sim_error = e.what();
  }
  const bool ok = fuzz.ok() && fuzz.cases == kFuzzEvents && ev.ok() && sim_error.empty();
  return {ok, fmt("%llu fuzzed events, %llu violations; %llu eviction oracle trials, %llu "
                  "mismatches; simulator tier checks %s%s%s",
                  static_cast<unsigned long long>(fuzz.cases),
                  static_cast<unsigned long long>(fuzz.failures),
                  static_cast<unsigned long long>(ev.cases),
                  static_cast<unsigned long long>(ev.failures), sim_error.empty() ? "clean" : sim_error.c_str(),
                  fuzz.ok() ? "" : "; ", fuzz.first.c_str())};
}

Verdict determinism() {
  // An offloading deployment so the event log is not empty.
  auto s = default_scenario(Method::CoMoE, "sb64");
  s.resources.base.gpu_mem_total = 4e9;
  s.workload.tokens = 128;
  s.workload.history_tokens = 500;
  std::ostringstream log_a, log_b;
  const auto a = to_json(run_inference(s, &log_a)).dump();
  const auto b = to_json(run_inference(s, &log_b)).dump();
  const bool reruns = a == b && log_a.str() == log_b.str();

  const auto doc = parse_json_file(std::string(MOESIM_SCENARIO_DIR) + "/deployability_8gb.json");
  const auto spec = sweep_from_json(nlohmann::json::parse(R"({
      "axes": [{"path": "method", "values": ["msmoe", "eoffload", "comoe"]},
               {"path": "model.preset", "values": ["sb8", "sb32"]}],
      "seeds": 2})"));
  auto rows = [&](unsigned threads) {
    std::string out;
    for (const auto& r : run_sweep(doc, spec, threads)) out += csv_row(r.report) + "\n";
    return out;
  };
  const auto one = rows(1);
  const bool threads_match = one == rows(4);
  return {reruns && threads_match,
          fmt("repeat run: report %s, event log %s (%zu bytes); 12-row sweep with 1 vs 4 "
              "threads %s",
              a == b ? "identical" : "DIFFERS", log_a.str() == log_b.str() ? "identical" : "DIFFERS",
              log_a.str().size(), threads_match ? "identical" : "DIFFERS")};
}

Verdict overheads() {
  const auto& big = large_model_run().comoe;
  double pred = big.predictor_fraction, adj = big.adjust_fraction;
  for (const auto& r : paired_latency().comoe) {
    pred = std::max(pred, r.predictor_fraction);
    adj = std::max(adj, r.adjust_fraction);
  }
  return {pred < kOverheadCap && adj < kOverheadCap,
          fmt("worst predictor fraction %.4f, adjustment fraction %.5f (cap %.2f) across "
              "sb128 and the sb32 seeds",
              pred, adj, kOverheadCap)};
}

}  // namespace
}  // namespace moesim

int main() {
  using namespace moesim;
  const std::vector<std::pair<const char*, std::function<Verdict()>>> criteria = {
      {"memory ratio", memory_ratio},        {"latency ordering", latency_ordering},
      {"failure probability", theorem1},     {"prefetch ordering", theorem2},
      {"deployability tables", deployability}, {"fusion math", fusion_math},
      {"predictor", predictor},              {"cache safety", cache_safety},
      {"determinism", determinism},          {"overhead fractions", overheads},
  };
  int failed = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    Verdict v;
    try {
      v = criteria[i].second();
    } catch (const std::exception& e) {
      v = {false, std::string("threw: ") + e.what()};
    }
    failed += !v.pass;
    std::printf("%s criterion %zu (%s): %s\n", v.pass ? "PASS" : "FAIL", i + 1, criteria[i].first,
                v.detail.c_str());
    std::fflush(stdout);
  }
  std::printf("%zu/%zu criteria passed\n", criteria.size() - failed, criteria.size());
  return failed ? 1 : 0;
}
