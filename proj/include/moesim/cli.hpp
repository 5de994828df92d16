// Copyright (c) The moesim Authors.
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <iosfwd>
#include <string_view>

namespace moesim {

enum ExitCode : int { kExitOk = 0, kExitConfig = 2, kExitInfeasible = 3, kExitRuntime = 4 };

inline constexpr std::string_view kToolVersion = "0.1.0";

/// FNV-1a 64-bit; the manifest records it over the raw scenario bytes.
std::uint64_t fnv1a64(std::string_view bytes);

/// Entry point for `run`, `sweep` and `verify`. Never throws; errors map to
/// ExitCode values and a message on `err`.
int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace moesim
