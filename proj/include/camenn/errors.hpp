#pragma once

#include <stdexcept>
#include <string>

namespace camenn {

/// Violated precondition or invariant of an operation.
class ContractError : public std::logic_error {
public:
    explicit ContractError(const std::string& what) : std::logic_error(what) {}
};

/// Operand shapes that cannot be combined.
class DimensionError : public ContractError {
public:
    explicit DimensionError(const std::string& what) : ContractError(what) {}
};

/// Malformed input file; `line()` is 1-based, 0 when not line oriented.
class ParseError : public std::runtime_error {
public:
    ParseError(const std::string& what, std::size_t line)
        : std::runtime_error(line == 0 ? what : "line " + std::to_string(line) + ": " + what),
          line_(line),
          message_(what) {}

    std::size_t line() const noexcept { return line_; }
    /// The message without the line prefix.
    const std::string& message() const noexcept { return message_; }

private:
    std::size_t line_;
    std::string message_;
};

class ConfigError : public std::runtime_error {
public:
    explicit ConfigError(const std::string& what) : std::runtime_error(what) {}
};

/// Non-finite values reached a place that cannot absorb them (e.g. optimizer input).
class NumericError : public std::runtime_error {
public:
    explicit NumericError(const std::string& what) : std::runtime_error(what) {}
};

}  // namespace camenn
