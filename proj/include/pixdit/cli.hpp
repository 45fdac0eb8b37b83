// Copyright (c) 2026 pixdit authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <string>
#include <vector>

namespace pixdit {

// Runs the full CLI in-process (argv without the program name).
// Exit codes: 0 success, 1 usage/config error, 2 runtime failure,
// 3 verification failure.
int run_cli(const std::vector<std::string>& args);

}  // namespace pixdit
