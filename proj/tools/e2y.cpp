// SPDX-License-Identifier: Apache-2.0
#include <e2y/cli.hpp>

#include <iostream>

int main(int argc, char **argv) {
  return e2y::run_cli(argc, argv, std::cout, std::cerr);
}
