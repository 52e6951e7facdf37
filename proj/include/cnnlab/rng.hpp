// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <limits>
#include <string_view>

namespace cnnlab {

// 64-bit finalizer of SplitMix64
constexpr std::uint64_t mix64(std::uint64_t z) {
  z += 0x9e3779b97f4a7c15ULL;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

// FNV-1a of a purpose label
constexpr std::uint64_t purpose_id(std::string_view name) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (char c : name) {
    h ^= static_cast<unsigned char>(c);
    h *= 0x100000001b3ULL;
  }
  return h;
}

/**
 * Counter-based SplitMix64 stream keyed by (seed, purpose, index).
 * Output k of a stream is mix64(key + k * gamma), so streams with different
 * keys can be generated in any order or in parallel.
 */
class Rng {
public:
  using result_type = std::uint64_t;

  Rng(std::uint64_t seed, std::uint64_t purpose, std::uint64_t index = 0)
    : key_(mix64(seed ^ mix64(purpose ^ mix64(index)))) {}
  Rng(std::uint64_t seed, std::string_view purpose, std::uint64_t index = 0)
    : Rng(seed, purpose_id(purpose), index) {}

  static constexpr result_type min() { return 0; }
  static constexpr result_type max() {
    return std::numeric_limits<result_type>::max();
  }

  result_type operator()() {
    return mix64(key_ + (counter_++) * 0x9e3779b97f4a7c15ULL);
  }

  // uniform on [0, 1) with 53 random bits
  double uniform() {
    return static_cast<double>((*this)() >> 11) * 0x1.0p-53;
  }
  double normal();
  // uniform integer in [0, n)
  std::uint64_t below(std::uint64_t n);

private:
  std::uint64_t key_;
  std::uint64_t counter_ = 0;
};

} // namespace cnnlab
