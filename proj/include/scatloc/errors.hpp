#pragma once

#include <stdexcept>
#include <string>

namespace scatloc {

/// Configuration / input validation failure (CLI exit code 2).
class config_error : public std::runtime_error {
public:
  explicit config_error(const std::string& msg) : std::runtime_error(msg) {}
};

/// File or serialization failure (CLI exit code 3).
class io_error : public std::runtime_error {
public:
  explicit io_error(const std::string& msg) : std::runtime_error(msg) {}
};

/// Iterative solver failure surfaced to the caller (CLI exit code 4).
class solver_error : public std::runtime_error {
public:
  explicit solver_error(const std::string& msg) : std::runtime_error(msg) {}
};

} // namespace scatloc
