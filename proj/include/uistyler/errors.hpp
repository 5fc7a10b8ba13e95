#pragma once

#include <stdexcept>
#include <string>

namespace uistyler {

// One exception type per failure contract. Callers catch the specific type
// when they can recover and the base std::exception otherwise.

struct ShapeError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

struct ConfigError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

struct IoError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Malformed file contents; message carries the byte offset where parsing failed.
struct ParseError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct IntegrityError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct CapabilityError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct OracleQualityError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Misuse of the differentiation API, e.g. backward from a non-scalar.
struct ContractError : std::logic_error {
  using std::logic_error::logic_error;
};

// Non-finite value produced by a forward op on finite inputs.
struct NumericError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

}  // namespace uistyler
