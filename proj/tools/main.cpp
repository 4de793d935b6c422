// SPDX-License-Identifier: Apache-2.0
#include "errorflow/cli.hpp"

int main(int argc, char** argv) { return errorflow::cli_main(argc, argv); }
