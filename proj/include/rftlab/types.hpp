#ifndef RFTLAB_TYPES_HPP
#define RFTLAB_TYPES_HPP

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace rftlab {

using Token = std::int32_t;
using TokenSequence = std::vector<Token>;
using QueryId = std::int64_t;

/// Invalid or inconsistent configuration (bad key, dimension mismatch, ...).
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A preset's structural identity (budget product, batch bound) is violated.
class ConstraintError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Unreadable, corrupted, or version-incompatible checkpoint.
class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace rftlab

#endif  // RFTLAB_TYPES_HPP
