// Copyright (c) 2026 ctxisp contributors
// SPDX-License-Identifier: Apache-2.0

#include "ctxisp/rng.hpp"

#include <cmath>
#include <numbers>
#include <sstream>

namespace ctxisp {

uint64_t Rng::next_below(uint64_t n) {
  if (n <= 1) return 0;
  uint64_t limit = UINT64_MAX - UINT64_MAX % n;
  uint64_t x;
  do {
    x = eng_();
  } while (x >= limit);
  return x % n;
}

double Rng::normal() {
  // u1 in (0,1] so the log is finite.
  double u1 = (double(eng_() >> 11) + 1.0) * 0x1.0p-53;
  double u2 = double(eng_() >> 11) * 0x1.0p-53;
  return std::sqrt(-2.0 * std::log(u1)) *
         std::cos(2.0 * std::numbers::pi * u2);
}

std::string Rng::state() const {
  std::ostringstream os;
  os << eng_;
  return os.str();
}

void Rng::set_state(const std::string& s) {
  std::istringstream is(s);
  is >> eng_;
}

uint64_t Rng::mix(uint64_t seed, uint64_t stream) {
  uint64_t z = seed + 0x9e3779b97f4a7c15ull * (stream + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
  return z ^ (z >> 31);
}

}  // namespace ctxisp
