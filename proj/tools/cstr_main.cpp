// SPDX-License-Identifier: Apache-2.0
#include <iostream>

#include "cstr/cli.hpp"

int main(int argc, char** argv) { return cstr::run_cli(argc, argv, std::cout, std::cerr); }
