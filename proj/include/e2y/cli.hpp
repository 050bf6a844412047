// SPDX-License-Identifier: Apache-2.0
/**
 * @file   cli.hpp
 * @brief  `e2y` command line: generate, train, evaluate, predict, inspect.
 *
 * Exit codes: 0 success, 1 I/O error, 2 validation error, 3 numerical abort.
 */
#pragma once

#include <ostream>

namespace e2y {

inline constexpr int kExitOk = 0;
inline constexpr int kExitIo = 1;
inline constexpr int kExitValidation = 2;
inline constexpr int kExitNumerical = 3;

int run_cli(int argc, const char *const *argv, std::ostream &out, std::ostream &err);

} // namespace e2y
