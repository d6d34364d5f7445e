#pragma once

#include <stdexcept>

namespace kvshare {

// Base for everything the engine throws; callers can catch the family
// or a specific kind.
struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct DimensionError : Error { using Error::Error; };  // shape/length mismatch
struct CapacityError : Error { using Error::Error; };   // sequence exceeds max_seq
struct StrategyError : Error { using Error::Error; };   // invalid sharing strategy
struct ConfigError : Error { using Error::Error; };     // inconsistent model config
struct LoadError : Error { using Error::Error; };       // weight container problems
struct InputError : Error { using Error::Error; };      // bad corpus / calibration input
struct LogicError : Error { using Error::Error; };      // engine API misuse

}  // namespace kvshare
