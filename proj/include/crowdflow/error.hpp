#pragma once

#include <stdexcept>
#include <string>

namespace crowdflow {

// Error taxonomy maps onto CLI exit codes:
//   ConfigError -> 1, DataError/IoError -> 2, NumericalError -> 3.
struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Incompatible tensor shapes or extents.
struct DimensionError : Error {
  using Error::Error;
};

// API misuse (e.g. non-scalar loss passed to backward).
struct ContractError : Error {
  using Error::Error;
};

// Malformed or inconsistent input data (files, annotations, ranges).
struct DataError : Error {
  using Error::Error;
};

// Filesystem / format failures.
struct IoError : DataError {
  using DataError::DataError;
};

// Invalid run configuration (unknown keys, bad values).
struct ConfigError : Error {
  using Error::Error;
};

// NaN loss, diverged training, failed gradient check.
struct NumericalError : Error {
  using Error::Error;
};

}  // namespace crowdflow
