// Copyright (c) 2026 ctxisp contributors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <random>
#include <string>

namespace ctxisp {

// Deterministic random source. All distribution transforms are implemented
// here rather than with std:: distributions, whose output is not pinned by
// the standard; a given (seed, call sequence) yields identical streams on
// every platform with the same mt19937_64.
class Rng {
 public:
  explicit Rng(uint64_t seed) : eng_(seed) {}

  uint64_t next_u64() { return eng_(); }

  // Unbiased integer in [0, n) via rejection sampling.
  uint64_t next_below(uint64_t n);

  // [0, 1) with 53 random bits.
  double uniform() { return double(eng_() >> 11) * 0x1.0p-53; }
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Standard normal, Box-Muller, no cached second draw: every call consumes
  // exactly two engine outputs, which keeps stream positions predictable.
  double normal();

  // Fisher-Yates using this stream.
  template <typename Vec>
  void shuffle(Vec& v) {
    for (size_t i = v.size(); i > 1; --i) {
      size_t j = size_t(next_below(i));
      std::swap(v[i - 1], v[j]);
    }
  }

  // Engine state as text, for checkpointing.
  std::string state() const;
  void set_state(const std::string& s);

  // Stateless mix for deriving independent stream seeds (splitmix64 step).
  static uint64_t mix(uint64_t seed, uint64_t stream);

 private:
  std::mt19937_64 eng_;
};

}  // namespace ctxisp
