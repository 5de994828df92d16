// Copyright (c) The moesim Authors.
// SPDX-License-Identifier: Apache-2.0

#include "moesim/cli.hpp"

#include <CLI11.hpp>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <thread>

#include "moesim/error.hpp"
#include "moesim/simulator.hpp"

namespace moesim {

namespace fs = std::filesystem;
using nlohmann::json;

std::uint64_t fnv1a64(std::string_view bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

namespace {

enum class LogLevel { Error, Warn, Info, Debug };

LogLevel log_level_from_env() {
  const char* v = std::getenv("COMOE_LOG");
  if (!v) return LogLevel::Warn;
  const std::string s = v;
  if (s == "error") return LogLevel::Error;
  if (s == "info") return LogLevel::Info;
  if (s == "debug") return LogLevel::Debug;
  return LogLevel::Warn;
}

class Logger {
 public:
  explicit Logger(std::ostream& err) : err_(err), level_(log_level_from_env()) {}
  void operator()(LogLevel l, const std::string& msg) const {
    static constexpr const char* kNames[] = {"error", "warn", "info", "debug"};
    if (l <= level_) err_ << "moesim [" << kNames[static_cast<int>(l)] << "] " << msg << '\n';
  }

 private:
  std::ostream& err_;
  LogLevel level_;
};

std::string hex64(std::uint64_t x) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(x));
  return buf;
}

std::string read_bytes(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot open '" + path + "'");
  std::stringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

void write_file(const fs::path& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorKind::Runtime, "cannot write '" + path.string() + "'");
  out << content;
}

struct Manifest {
  std::string scenario_path;
  std::string out_dir;
  std::string command;
  std::string scenario_hash;
  std::vector<std::uint64_t> seeds;
};

void write_manifest(const Manifest& m) {
  const json j{{"scenario_path", m.scenario_path}, {"out_dir", m.out_dir},
               {"commands", json::array({m.command})}, {"tool_version", kToolVersion},
               {"scenario_hash", m.scenario_hash}, {"seeds", m.seeds}};
  write_file(fs::path(m.out_dir) / "manifest.json", j.dump(2) + "\n");
}

json parse_doc(const std::string& bytes, const std::string& path) {
  json doc = json::parse(bytes, nullptr, false);
  if (doc.is_discarded()) throw ConfigError("'" + path + "' is not valid JSON");
  if (!doc.is_object()) throw ConfigError("'" + path + "' must hold a JSON object");
  return doc;
}

// Seed list for the manifest; best effort because it is written before parsing.
std::vector<std::uint64_t> peek_seeds(const std::string& bytes, std::optional<std::uint64_t> seed) {
  if (seed) return {*seed};
  const json doc = json::parse(bytes, nullptr, false);
  if (doc.is_object() && doc.contains("seed") && doc["seed"].is_number_unsigned()) {
    return {doc["seed"].get<std::uint64_t>()};
  }
  return {};
}

struct Common {
  std::string scenario;
  std::string out;
  std::optional<std::uint64_t> seed;
  std::vector<std::string> sets;
  std::string command;
};

int cmd_run(const Common& c, bool dump_normalized, std::ostream& out, const Logger& log) {
  fs::create_directories(c.out);
  Manifest m{c.scenario, c.out, c.command, "", {}};
  std::string bytes;
  try {
    bytes = read_bytes(c.scenario);
  } catch (const ConfigError&) {
    write_manifest(m);
    throw;
  }
  m.scenario_hash = hex64(fnv1a64(bytes));
  m.seeds = peek_seeds(bytes, c.seed);
  write_manifest(m);

  json doc = parse_doc(bytes, c.scenario);
  for (const auto& o : c.sets) apply_override(doc, o);
  if (c.seed) doc["seed"] = *c.seed;
  Scenario s = scenario_from_json(doc);
  s.base_dir = fs::path(c.scenario).parent_path().string();
  if (dump_normalized) {
    write_file(fs::path(c.out) / "scenario.normalized.json", to_json(s).dump(2) + "\n");
    log(LogLevel::Info, "wrote normalized scenario");
    return kExitOk;
  }

  std::ofstream events(fs::path(c.out) / "events.jsonl");
  log(LogLevel::Info, "running '" + s.name + "'");
  const SimReport r = run_inference(s, &events);
  write_file(fs::path(c.out) / "report.json", to_json(r).dump(2) + "\n");
  std::string csv;
  for (const auto& col : csv_columns()) csv += (csv.empty() ? "" : ",") + col;
  write_file(fs::path(c.out) / "summary.csv", csv + "\n" + csv_row(r) + "\n");
  out << to_json(r).dump(2) << '\n';
  if (!r.feasible) {
    log(LogLevel::Error, "infeasible deployment: " + r.infeasible_reason);
    return kExitInfeasible;
  }
  return kExitOk;
}

const std::vector<std::string> kPlotMetrics{"mean_token_latency", "throughput", "peak_mem",
                                            "pmr", "hit_rate", "comm_volume"};

int cmd_sweep(const Common& c, const std::string& sweep_path, unsigned threads,
              std::ostream& out, const Logger& log) {
  fs::create_directories(c.out);
  const std::string bytes = read_bytes(c.scenario);
  const SweepSpec spec = sweep_from_json(parse_json_file(sweep_path));
  if (spec.axes.empty()) throw ConfigError("sweep has an empty product: no axes");
  write_manifest({c.scenario, c.out, c.command, hex64(fnv1a64(bytes)), spec.seeds});

  json doc = parse_doc(bytes, c.scenario);
  for (const auto& o : c.sets) apply_override(doc, o);
  if (c.seed) doc["seed"] = *c.seed;
  const auto rows = run_sweep(doc, spec, threads, fs::path(c.scenario).parent_path().string());
  log(LogLevel::Info, "sweep produced " + std::to_string(rows.size()) + " rows");

  std::string header;
  for (const auto& a : spec.axes) header += a.path + ",";
  for (std::size_t i = 0; i < csv_columns().size(); ++i) {
    header += (i ? "," : "") + csv_columns()[i];
  }
  std::string body = header + "\n";
  for (const auto& r : rows) {
    for (const auto& v : r.axis_values) body += v + ",";
    body += csv_row(r.report) + "\n";
  }
  write_file(fs::path(c.out) / "sweep.csv", body);

  // Long-format plot data: the last axis is x, the rest name the series.
  for (const auto& metric : kPlotMetrics) {
    std::string p = "series,x,seed,feasible,y\n";
    for (const auto& r : rows) {
      std::string series;
      for (std::size_t i = 0; i + 1 < r.axis_values.size(); ++i) {
        series += (i ? "|" : "") + r.axis_values[i];
      }
      if (series.empty()) series = "all";
      const json j = to_json(r.report);
      std::ostringstream y;
      y.precision(17);
      y << j.at(metric).get<double>();
      p += series + "," + r.axis_values.back() + "," + std::to_string(r.report.seed) + "," +
           (r.report.feasible ? "1" : "0") + "," + y.str() + "\n";
    }
    write_file(fs::path(c.out) / ("plot_" + metric + ".csv"), p);
  }
  out << "rows: " << rows.size() << '\n';
  return kExitOk;
}

void set_theorem1_param(Theorem1Params& p, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos) throw ConfigError("expected key=value, got '" + assignment + "'");
  const std::string key = assignment.substr(0, eq);
  double v = 0;
  try {
    v = std::stod(assignment.substr(eq + 1));
  } catch (const std::exception&) {
    throw ConfigError("parameter '" + key + "' needs a number");
  }
  const std::map<std::string, double*> doubles{
      {"mu", &p.mu},         {"sigma", &p.sigma},     {"a_m", &p.a_m},
      {"s_e", &p.s_e},       {"beta_risk", &p.beta_risk}, {"s_m", &p.s_m},
      {"m_other", &p.m_other}, {"confidence", &p.confidence}};
  if (auto it = doubles.find(key); it != doubles.end()) {
    *it->second = v;
  } else if (key == "experts") {
    p.experts = static_cast<int>(v);
  } else if (key == "seed") {
    p.seed = static_cast<std::uint64_t>(v);
  } else if (key == "trials") {
    p.trials = static_cast<std::uint64_t>(v);
  } else {
    throw ConfigError("unknown theorem 1 parameter '" + key + "'");
  }
}

constexpr std::uint64_t kMinTrials = 1000;
constexpr std::size_t kMinSeeds = 10;

int cmd_verify(const Common& c, int theorem, std::optional<std::uint64_t> trials,
               std::optional<std::size_t> seeds, const std::vector<std::string>& params,
               std::ostream& out, const Logger& log) {
  json result;
  bool pass = false;
  std::string hash;
  if (theorem == 1) {
    Theorem1Params p;
    for (const auto& a : params) set_theorem1_param(p, a);
    if (trials) p.trials = *trials;
    if (c.seed) p.seed = *c.seed;
    if (p.trials < kMinTrials) {
      throw ConfigError("theorem 1 needs at least " + std::to_string(kMinTrials) + " trials");
    }
    const auto r = theorem1_harness(p);
    pass = r.pass;
    result = {{"theorem", 1},          {"trials", p.trials},
              {"e_fixed", r.e_fixed},  {"fixed_failure_rate", r.fixed_rate},
              {"dynamic_failure_rate", r.dynamic_rate}, {"fixed_only", r.fixed_only},
              {"dynamic_only", r.dynamic_only}, {"p_value", r.p_value},
              {"verdict", r.pass ? "pass" : "fail"}};
  } else if (theorem == 2) {
    if (!params.empty()) throw ConfigError("theorem 2 takes scenario overrides via --set");
    Theorem2Params q;
    if (seeds) q.seeds = *seeds;
    if (c.seed) q.first_seed = *c.seed;
    if (q.seeds < kMinSeeds) {
      throw ConfigError("theorem 2 needs at least " + std::to_string(kMinSeeds) + " seeds");
    }
    Scenario s;
    if (c.scenario.empty()) {
      json doc = to_json(theorem2_scenario());
      for (const auto& o : c.sets) apply_override(doc, o);
      s = scenario_from_json(doc);
    } else {
      const std::string bytes = read_bytes(c.scenario);
      hash = hex64(fnv1a64(bytes));
      json doc = parse_doc(bytes, c.scenario);
      for (const auto& o : c.sets) apply_override(doc, o);
      s = scenario_from_json(doc);
      s.base_dir = fs::path(c.scenario).parent_path().string();
    }
    log(LogLevel::Info, "theorem 2 over " + std::to_string(q.seeds) + " seeds");
    const auto r = theorem2_harness(s, q);
    pass = r.pass;
    result = {{"theorem", 2},
              {"seeds", q.seeds},
              {"mean_latency_none", r.mean_none},
              {"mean_latency_fixed", r.mean_fixed},
              {"mean_latency_dynamic", r.mean_dynamic},
              {"ordering_fraction", r.ordering_fraction},
              {"hit_fraction", r.hit_fraction},
              {"p_fixed_vs_none", r.p_fixed_vs_none},
              {"p_dynamic_vs_fixed", r.p_dynamic_vs_fixed},
              {"verdict", r.pass ? "pass" : "fail"}};
  } else {
    throw ConfigError("--theorem must be 1 or 2");
  }
  if (!c.out.empty()) {
    fs::create_directories(c.out);
    std::vector<std::uint64_t> seed_list;
    if (c.seed) seed_list.push_back(*c.seed);
    write_manifest({c.scenario, c.out, c.command, hash, seed_list});
    write_file(fs::path(c.out) / "verify.json", result.dump(2) + "\n");
  }
  out << result.dump(2) << '\n';
  return pass ? kExitOk : 1;
}

int exit_code_for(ErrorKind k) {
  switch (k) {
    case ErrorKind::Config:
    case ErrorKind::Schema:
    case ErrorKind::InputDomain:
      return kExitConfig;
    case ErrorKind::Infeasible:
      return kExitInfeasible;
    case ErrorKind::Runtime:
      break;
  }
  return kExitRuntime;
}

}  // namespace

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  const Logger log(err);
  CLI::App app{"Mixture-of-experts edge inference simulator", "moesim"};
  app.require_subcommand(1);
  app.set_version_flag("--version", std::string(kToolVersion));

  Common c;
  for (int i = 0; i < argc; ++i) c.command += (i ? " " : "") + std::string(argv[i]);
  std::uint64_t seed = 0;
  bool dump_normalized = false;
  std::string sweep_path;
  unsigned threads = std::max(1u, std::thread::hardware_concurrency());
  int theorem = 0;
  std::uint64_t trials = 0;
  std::size_t seeds = 0;
  std::vector<std::string> params;

  auto add_common = [&](CLI::App* sub, bool need_scenario, bool need_out) {
    auto* s = sub->add_option("--scenario", c.scenario, "Scenario JSON file");
    if (need_scenario) s->required()->check(CLI::ExistingFile);
    auto* o = sub->add_option("--out", c.out, "Output directory");
    if (need_out) o->required();
    sub->add_option("--seed", seed, "Override the scenario seed");
    sub->add_option("--set", c.sets, "Dotted-path override key=value")->take_all();
  };

  auto* run = app.add_subcommand("run", "Simulate one scenario");
  add_common(run, true, true);
  run->add_flag("--dump-normalized", dump_normalized,
                "Write the normalized scenario and exit without simulating");

  auto* sweep = app.add_subcommand("sweep", "Cartesian sweep over scenario paths");
  add_common(sweep, true, true);
  sweep->add_option("--sweep", sweep_path, "Sweep spec JSON")->required()->check(CLI::ExistingFile);
  sweep->add_option("--threads", threads, "Worker threads")->check(CLI::PositiveNumber);

  auto* verify = app.add_subcommand("verify", "Statistical check of a theorem");
  add_common(verify, false, false);
  verify->add_option("--theorem", theorem, "1 or 2")->required()->check(CLI::IsMember({1, 2}));
  auto* trials_opt = verify->add_option("--trials", trials, "Monte Carlo trials (theorem 1)");
  auto* seeds_opt = verify->add_option("--seeds", seeds, "Seeded runs (theorem 2)");
  verify->add_option("--param", params, "Theorem 1 parameter key=value")->take_all();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kExitOk : kExitConfig;
  }

  auto* active = app.get_subcommands().front();
  if (active->count("--seed")) c.seed = seed;
  try {
    if (active == run) return cmd_run(c, dump_normalized, out, log);
    if (active == sweep) return cmd_sweep(c, sweep_path, threads, out, log);
    return cmd_verify(c, theorem,
                      trials_opt->count() ? std::optional<std::uint64_t>(trials) : std::nullopt,
                      seeds_opt->count() ? std::optional<std::size_t>(seeds) : std::nullopt,
                      params, out, log);
  } catch (const Error& e) {
    log(LogLevel::Error, e.what());
    return exit_code_for(e.kind());
  } catch (const nlohmann::json::exception& e) {
    log(LogLevel::Error, std::string("config: ") + e.what());
    return kExitConfig;
  } catch (const std::exception& e) {
    log(LogLevel::Error, e.what());
    return kExitRuntime;
  }
}

}  // namespace moesim
