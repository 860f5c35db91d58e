#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace cindep {

/// Base for every error raised by the library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Shapes of two operands do not agree.
class DimensionError : public Error {
public:
    using Error::Error;
};

/// An argument violates a documented precondition (empty input, bad count, ...).
class ArgumentError : public Error {
public:
    using Error::Error;
};

/// A file or text form could not be parsed.
class FormatError : public Error {
public:
    using Error::Error;
};

/// Training produced a non-finite loss.
class DivergenceError : public Error {
public:
    DivergenceError(std::size_t step, const std::string& what)
        : Error("diverged at step " + std::to_string(step) + ": " + what), step_(step) {}

    std::size_t step() const noexcept { return step_; }

private:
    std::size_t step_;
};

}  // namespace cindep
