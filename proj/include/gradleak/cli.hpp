// SPDX-License-Identifier: Apache-2.0

#pragma once

namespace gradleak {

// Subcommands: run, bounds, extract-demo, prune-demo. Returns 0 on success,
// 1 on a runtime failure and 2 on invalid flags.
int cli_main(int argc, char** argv);

}  // namespace gradleak
