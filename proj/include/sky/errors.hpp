#pragma once

#include <stdexcept>
#include <string>

namespace sky {

/// Base class for all library errors.
struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

/// Tensor dimension / shape mismatches.
struct ShapeError : Error {
    using Error::Error;
};

/// Invalid operation or layer specification (e.g. non-positive output size).
struct SpecError : Error {
    using Error::Error;
};

/// API contract violations (backward on non-scalar, missing gradient, ...).
struct ContractError : Error {
    using Error::Error;
};

/// Bad input data: annotations, config files, parse failures.
struct DataError : Error {
    using Error::Error;
};

/// Binary container violations; message carries the byte offset where known.
struct FormatError : DataError {
    using DataError::DataError;
};

/// A computation would exceed a configured memory budget.
struct ResourceError : Error {
    using Error::Error;
};

/// Non-finite values detected during training or inference.
struct NumericError : Error {
    using Error::Error;
};

}  // namespace sky
