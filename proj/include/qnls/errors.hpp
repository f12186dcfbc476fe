#pragma once

#include <stdexcept>
#include <string>

namespace qnls {

/// Base of every error raised by the library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Model or configuration parameters violate an admissibility bound.
class ParameterError : public Error {
public:
    using Error::Error;
};

/// An iteration failed to converge, or an intermediate became non-finite.
class NumericError : public Error {
public:
    using Error::Error;
};

/// Argument outside the mathematical domain of an operation (e.g. non-finite).
class DomainError : public Error {
public:
    using Error::Error;
};

/// Input is degenerate for the requested operation (zero field, empty set).
class DegenerateInputError : public Error {
public:
    using Error::Error;
};

/// Field shapes or grids are incompatible.
class ShapeError : public Error {
public:
    using Error::Error;
};

}  // namespace qnls
