// Copyright (c) The moesim Authors.
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <string>

#include "moesim/error.hpp"
#include "moesim/scenario.hpp"

namespace moesim {
namespace {

using nlohmann::json;

TEST(Scenario, NormalizedFormRoundTrips) {
  for (Method m : {Method::Original, Method::MSMoE, Method::EOffload, Method::CoMoE}) {
    const auto s = default_scenario(m, "sb64");
    const json once = to_json(s);
    const json twice = to_json(scenario_from_json(once));
    EXPECT_EQ(once, twice) << method_name(m);
  }
}

TEST(Scenario, MethodNamesParse) {
  for (Method m : {Method::Original, Method::MSMoE, Method::EOffload, Method::CoMoE}) {
    EXPECT_EQ(parse_method(method_name(m)), m);
  }
  EXPECT_THROW(parse_method("dense"), ConfigError);
}

TEST(Scenario, UnknownKeyIsNamed) {
  json doc = to_json(default_scenario(Method::CoMoE));
  doc["offload"]["prefetch_thresh"] = 0.3;
  try {
    scenario_from_json(doc);
    FAIL() << "expected ConfigError";
  } catch (const ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find("prefetch_thresh"), std::string::npos) << e.what();
  }
}

TEST(Scenario, PartialDocumentsTakeDefaults) {
  const auto s = scenario_from_json(json{{"method", "eoffload"}, {"model", {{"preset", "sb8"}}}});
  EXPECT_EQ(s.method, Method::EOffload);
  EXPECT_EQ(s.model.spec.experts_per_layer, 8);
}

TEST(Scenario, OverridesParseJsonAndFallBackToStrings) {
  json doc = json::object();
  apply_override(doc, "workload.tokens=64");
  apply_override(doc, "method=msmoe");
  apply_override(doc, "offload.policy.theta_base=0.25");
  EXPECT_EQ(doc["workload"]["tokens"], 64);
  EXPECT_EQ(doc["method"], "msmoe");
  const auto s = scenario_from_json(doc);
  EXPECT_EQ(s.workload.tokens, 64u);
  EXPECT_DOUBLE_EQ(s.offload.policy.theta_base, 0.25);
  EXPECT_THROW(apply_override(doc, "no_equals_sign"), ConfigError);
}

TEST(Scenario, ValidateRejectsInconsistentResources) {
  auto s = default_scenario(Method::CoMoE);
  s.resources.base.gpu_mem_used = s.resources.base.gpu_mem_total * 2;
  EXPECT_THROW(validate(s), Error);
  s = default_scenario(Method::CoMoE);
  s.resources.a_m = 1.5;
  EXPECT_THROW(validate(s), ConfigError);
}

TEST(Scenario, BundledFixturesLoad) {
  const std::string dir = MOESIM_SCENARIO_DIR;
  for (const char* name : {"switch_base_32_comoe.json", "switch_base_32_original.json",
                           "switch_base_256_4gb.json", "deployability_8gb.json",
                           "theorem2_fluctuating_bw.json"}) {
    EXPECT_NO_THROW(load_scenario(dir + "/" + name)) << name;
  }
  EXPECT_THROW(load_scenario(dir + "/does_not_exist.json"), Error);
}

}  // namespace
}  // namespace moesim
