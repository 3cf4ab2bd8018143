#pragma once

#include <stdexcept>
#include <string>

namespace vidiff {

/// Invalid or inconsistent configuration value. `key` names the offending
/// setting as a dotted path when known.
class ConfigError : public std::invalid_argument {
public:
    explicit ConfigError(const std::string& msg, std::string key = {})
        : std::invalid_argument(msg), key_(std::move(key)) {}
    const std::string& key() const noexcept { return key_; }

private:
    std::string key_;
};

/// Timestep or index outside its legal range.
class RangeError : public std::out_of_range {
public:
    using std::out_of_range::out_of_range;
};

/// Caller broke an operation's preconditions (shape mismatch, illegal tag).
class ContractError : public std::logic_error {
public:
    using std::logic_error::logic_error;
};

/// File system or decoding failure.
class IoError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Numerical failure during optimization (non-finite loss and similar).
class NumericError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

}  // namespace vidiff
