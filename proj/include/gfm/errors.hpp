#pragma once

#include <stdexcept>
#include <string>

namespace gfm {

// Caller broke a documented precondition (shape mismatch, bad size, ...).
class ContractViolation : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

// A NaN or infinity surfaced where the computation requires finite values.
class NumericFailure : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Invalid configuration: unknown dataset, bad enum value, unknown key, ...
class ConfigError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// A node with zero degree where a normalized operator needs D^{-1/2}.
class DegenerateDegree : public std::runtime_error {
public:
    DegenerateDegree(std::size_t node, const std::string& what)
        : std::runtime_error(what), node_(node) {}
    std::size_t node() const noexcept { return node_; }

private:
    std::size_t node_;
};

class IoError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

} // namespace gfm
