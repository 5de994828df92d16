// Copyright (c) The moesim Authors.
// SPDX-License-Identifier: Apache-2.0

#include <iostream>

#include "moesim/cli.hpp"

int main(int argc, char** argv) { return moesim::run_cli(argc, argv, std::cout, std::cerr); }
