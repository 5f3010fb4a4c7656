#pragma once

#include <stdexcept>
#include <string>

namespace lapmamba {

// Base class for everything this library throws on purpose.
struct Error : std::runtime_error {
  explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

// Tensor shapes do not line up.
struct DimensionError : Error {
  explicit DimensionError(const std::string& msg) : Error(msg) {}
};

// Bad user-supplied configuration (CLI exit code 2).
struct ConfigError : Error {
  explicit ConfigError(const std::string& msg) : Error(msg) {}
};

// An internal precondition was violated by the caller.
struct ContractError : Error {
  explicit ContractError(const std::string& msg) : Error(msg) {}
};

// Malformed file on disk (checkpoint, image, ...).
struct FormatError : Error {
  explicit FormatError(const std::string& msg) : Error(msg) {}
};

}  // namespace lapmamba
