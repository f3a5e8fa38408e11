#pragma once

#include <stdexcept>
#include <string>

namespace reladiff {

// Error taxonomy shared by every module. Each maps onto one CLI exit code
// family in the harness (usage, data, check failure).

struct ShapeError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

/// A caller violated a documented precondition (index range, scalar root, ...).
struct ContractError : std::logic_error {
  using std::logic_error::logic_error;
};

/// Invalid configuration value; the message names the offending field.
struct ConfigError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

/// Malformed or unsupported file. Carries the byte offset where parsing stopped.
struct FormatError : std::runtime_error {
  FormatError(const std::string& what, std::size_t offset)
      : std::runtime_error(what + " (at byte " + std::to_string(offset) + ")"),
        offset(offset) {}
  std::size_t offset;
};

struct UnsupportedVersionError : FormatError {
  using FormatError::FormatError;
};

/// Operation needs a differentiation capability that is currently disabled.
struct CapabilityError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Checkpoint or dataset could not be loaded or does not match the config.
struct LoadError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

}  // namespace reladiff
