// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <string>
#include <vector>

namespace errorflow {

/// Subcommand dispatcher for the errorflow tool. Exit codes: 0 success,
/// 1 validation/usage error, 2 I/O error.
int cli_main(const std::vector<std::string>& args);
int cli_main(int argc, char** argv);

}  // namespace errorflow
