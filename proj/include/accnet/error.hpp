#pragma once

#include <stdexcept>
#include <string>

namespace accnet {

/// Invalid input or configuration (CLI exit code 2).
class ConfigError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

/// Numerical failure: factorization did not succeed, NaN loss, ... (CLI exit code 3).
class NumericError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

} // namespace accnet
