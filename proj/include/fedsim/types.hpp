#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

namespace fedsim {

using ClientId = std::int64_t;
using Seconds = double;

constexpr Seconds kSecondsPerHour = 3600.0;
constexpr Seconds kSecondsPerDay = 86400.0;
constexpr Seconds kSecondsPerWeek = 7.0 * kSecondsPerDay;

// Bad user input: malformed files, out-of-range parameters, schema mismatches.
// The CLI maps these to exit code 2.
class ValidationError : public std::runtime_error {
 public:
  explicit ValidationError(const std::string& what) : std::runtime_error(what) {}
};

// Internal invariant broken mid-run (mixed base versions, digest mismatch on
// resume, ...).  The CLI maps these to exit code 1.
class SimulationError : public std::runtime_error {
 public:
  explicit SimulationError(const std::string& what) : std::runtime_error(what) {}
};

}  // namespace fedsim
