// SPDX-License-Identifier: Apache-2.0
#include <iostream>

#include "kdr/cli.hpp"

int main(int argc, char** argv) { return kdr::run_cli(argc, argv, std::cin, std::cout, std::cerr); }
