#pragma once

#include <stdexcept>
#include <string>

namespace bexg {

// Argument outside the mathematical domain of an operation (negative n, omega <= 1, ...).
struct DomainError : std::domain_error {
    using std::domain_error::domain_error;
};

// Too few points/states/levels for the requested estimate.
struct InsufficientData : std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};

// A caller broke a documented precondition (off-simplex state, mismatched n, ...).
struct ContractViolation : std::logic_error {
    using std::logic_error::logic_error;
};

// Invalid or infeasible configuration.
struct ConfigError : std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};

struct ParseError : std::runtime_error {
    ParseError(std::size_t line, const std::string& what)
        : std::runtime_error("line " + std::to_string(line) + ": " + what), line_(line) {}
    std::size_t line() const noexcept { return line_; }

  private:
    std::size_t line_;
};

}  // namespace bexg
