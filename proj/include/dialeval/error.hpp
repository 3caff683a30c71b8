#pragma once

#include <stdexcept>
#include <string>

namespace dialeval {

/// Base class of every error thrown by the library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Malformed input text (JSON/CSV syntax). Carries the 1-based line and column.
class ParseError : public Error {
public:
    ParseError(const std::string& source, std::size_t line, std::size_t column, const std::string& what)
        : Error(source + ":" + std::to_string(line) + ":" + std::to_string(column) + ": " + what),
          line_(line), column_(column) {}

    std::size_t line() const noexcept { return line_; }
    std::size_t column() const noexcept { return column_; }

private:
    std::size_t line_;
    std::size_t column_;
};

/// Well-formed input that violates a data invariant (bad span, unknown id, score out of range...).
class DataError : public Error {
public:
    using Error::Error;
};

/// A quantity is mathematically undefined for the given input (constant vector, zero expected disagreement...).
class NumericError : public Error {
public:
    using Error::Error;
};

}  // namespace dialeval
