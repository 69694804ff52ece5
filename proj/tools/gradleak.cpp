// SPDX-License-Identifier: Apache-2.0

#include "gradleak/cli.hpp"

int main(int argc, char** argv) { return gradleak::cli_main(argc, argv); }
