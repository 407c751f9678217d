// Copyright (c) 2026 ctxisp contributors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <sstream>
#include <stdexcept>
#include <string>

namespace ctxisp {

namespace detail {

template <typename... Args>
std::string concat(Args&&... args) {
  std::ostringstream os;
  (os << ... << args);
  return os.str();
}

}  // namespace detail

// Contract violations (bad shapes, bad arguments) throw std::invalid_argument;
// environment failures (I/O, missing files) throw std::runtime_error.
#define CTXISP_CHECK(cond, ...)                                          \
  do {                                                                   \
    if (!(cond))                                                         \
      throw std::invalid_argument(::ctxisp::detail::concat(__VA_ARGS__)); \
  } while (0)

#define CTXISP_REQUIRE(cond, ...)                                       \
  do {                                                                  \
    if (!(cond))                                                        \
      throw std::runtime_error(::ctxisp::detail::concat(__VA_ARGS__));  \
  } while (0)

}  // namespace ctxisp
