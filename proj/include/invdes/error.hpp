#pragma once

#include <stdexcept>
#include <string>

namespace invdes {

/// Base class for all invdes errors.
struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

/// Shape or dimension mismatch between operands.
struct ShapeError : Error {
    using Error::Error;
};

/// NaN/Inf detected, factorization failure, loss divergence.
struct NumericError : Error {
    using Error::Error;
};

/// Invalid configuration value or unparsable config file.
struct ConfigError : Error {
    using Error::Error;
};

/// A pipeline stage was invoked before its prerequisite ran.
struct MissingArtifactError : Error {
    using Error::Error;
};

/// File read/write failure.
struct IoError : Error {
    using Error::Error;
};

}  // namespace invdes
