#pragma once

#include <stdexcept>
#include <string>

namespace fastadapt {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Operand shapes are not conformable.
class ShapeError : public Error {
public:
    using Error::Error;
};

/// A matrix that must be inverted or factored is singular or not positive definite.
class SingularMatrixError : public Error {
public:
    using Error::Error;
};

/// Non-finite values, divergence, or a failed numerical procedure.
class NumericError : public Error {
public:
    using Error::Error;
};

/// Invalid configuration or argument values.
class ConfigError : public Error {
public:
    using Error::Error;
};

/// File or stream problems (checkpoints, suites, result files).
class IoError : public Error {
public:
    using Error::Error;
};

} // namespace fastadapt
