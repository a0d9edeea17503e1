#pragma once

#include <stdexcept>
#include <string>

namespace cwb {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// A point, matrix or request does not have the expected dimension.
class DimensionError : public Error {
public:
    using Error::Error;
};

/// An argument violates a documented precondition.
class InvalidArgument : public Error {
public:
    using Error::Error;
};

/// Entropic overflow or a non-finite objective during optimization.
class DivergenceError : public Error {
public:
    using Error::Error;
};

/// An iterative oracle did not reach its tolerance.
class ConvergenceError : public Error {
public:
    using Error::Error;
};

/// The source has no density (empirical sample sets).
class DensityUnavailable : public Error {
public:
    using Error::Error;
};

class IoError : public Error {
public:
    using Error::Error;
};

class ConfigError : public Error {
public:
    using Error::Error;
};

}  // namespace cwb
