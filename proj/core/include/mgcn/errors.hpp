#pragma once

#include <stdexcept>
#include <string>

namespace mgcn {

/// Malformed input, violated dataset invariant, corrupt file.
class DataError : public std::runtime_error {
public:
    explicit DataError(const std::string& msg) : std::runtime_error(msg) {}
};

/// Non-finite value where a finite one is required.
class NumericError : public std::runtime_error {
public:
    explicit NumericError(const std::string& msg) : std::runtime_error(msg) {}
};

}  // namespace mgcn
