#pragma once

#include <stdexcept>
#include <string>

namespace adanat {

// Base for every failure the library reports. Subclasses map onto the CLI exit codes.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Invalid configuration or argument combination (exit code 2).
class ConfigError : public Error {
 public:
  using Error::Error;
};

// Loss, gradient or ratio went non-finite (exit code 3).
class NumericalError : public Error {
 public:
  using Error::Error;
};

// A checkpoint, stats file or other input artifact is missing or corrupt (exit code 4).
class MissingArtifactError : public Error {
 public:
  using Error::Error;
};

class ShapeError : public Error {
 public:
  using Error::Error;
};

// Requested computation is not supported for this input (e.g. enumeration too large).
class CapabilityError : public Error {
 public:
  using Error::Error;
};

// An external reward hook failed; the trajectory it was scoring must be dropped.
class RewardUnavailable : public Error {
 public:
  using Error::Error;
};

}  // namespace adanat
