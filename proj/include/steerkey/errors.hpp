#pragma once

#include <stdexcept>
#include <string>

namespace steerkey {

/// Argument outside the mathematical domain of an operation.
class DomainError : public std::domain_error {
public:
    using std::domain_error::domain_error;
};

/// Caller violated a structural precondition (wrong outcome count, shape mismatch, ...).
class ContractError : public std::logic_error {
public:
    using std::logic_error::logic_error;
};

/// Malformed input file. Carries the 1-based line number when known.
class ParseError : public std::runtime_error {
public:
    ParseError(const std::string& what, int line = 0)
        : std::runtime_error(line > 0 ? "line " + std::to_string(line) + ": " + what : what),
          line_(line) {}
    int line() const noexcept { return line_; }

private:
    int line_;
};

/// A word needed by the objective or a constraint is not reachable from the moment basis.
class AssemblyError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// An SDP could not be solved to a certified bound.
class SolverError : public std::runtime_error {
public:
    SolverError(const std::string& what, int node = -1)
        : std::runtime_error(node >= 0 ? "node " + std::to_string(node) + ": " + what : what),
          node_(node) {}
    int node() const noexcept { return node_; }

private:
    int node_;
};

}  // namespace steerkey
