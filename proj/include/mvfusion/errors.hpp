#pragma once

#include <stdexcept>
#include <string>

namespace mvf {

// Shape or size disagreement between operands.
class DimensionError : public std::runtime_error {
public:
  explicit DimensionError(const std::string& what) : std::runtime_error("dimension error: " + what) {}
};

// NaN or infinity reached a boundary where finiteness is guaranteed.
class NumericError : public std::runtime_error {
public:
  explicit NumericError(const std::string& what) : std::runtime_error("numeric error: " + what) {}
};

// API misuse: a precondition the caller controls was violated.
class ContractError : public std::runtime_error {
public:
  explicit ContractError(const std::string& what) : std::runtime_error("contract violation: " + what) {}
};

// Bad experiment configuration or malformed input file.
class ConfigError : public std::runtime_error {
public:
  explicit ConfigError(const std::string& what) : std::runtime_error("config error: " + what) {}
};

}  // namespace mvf
