#pragma once

#include <cstdint>
#include <random>

#include "fedsim/types.hpp"

namespace fedsim {

using Rng = std::mt19937_64;

// splitmix64 finalizer; used to derive independent seeds from a master seed.
constexpr std::uint64_t mix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

constexpr std::uint64_t hash_combine(std::uint64_t a, std::uint64_t b) {
  return mix64(a ^ mix64(b));
}

// Per-task seed: one deterministic stream per (master, client, base_version).
// Task replays (checkpoint resume, worker re-queue) regenerate the same
// stream without any shared RNG state to persist.
constexpr std::uint64_t task_seed(std::uint64_t master, ClientId client,
                                  std::uint64_t base_version) {
  return hash_combine(hash_combine(master, static_cast<std::uint64_t>(client)),
                      base_version + 0x517cc1b727220a95ULL);
}

constexpr std::uint64_t trial_seed(std::uint64_t master, std::uint64_t trial_index) {
  return hash_combine(master, 0xa0761d6478bd642fULL + trial_index);
}

// Uniform double in [0,1) from the top 53 bits of one engine draw.  Spelled
// out (instead of uniform_real_distribution) so tests can replay draws by
// hand and goldens do not depend on library internals.
inline double canonical_u01(Rng& rng) {
  return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

}  // namespace fedsim
