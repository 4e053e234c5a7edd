#pragma once

#include <stdexcept>
#include <string>

namespace mmib {

struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Tensor shapes that do not compose.
struct ShapeError : Error {
  using Error::Error;
};

/// Argument outside the domain of a function (log of a non-positive value, ...).
struct DomainError : Error {
  using Error::Error;
};

/// Violated call contract (backward on a non-scalar, empty pooling, ...).
struct ContractError : Error {
  using Error::Error;
};

/// Malformed binary or JSON artifact.
struct FormatError : Error {
  using Error::Error;
};

/// Dataset content that fails validation.
struct DataError : Error {
  using Error::Error;
};

/// Invalid or inconsistent configuration.
struct ConfigError : Error {
  using Error::Error;
};

}  // namespace mmib
