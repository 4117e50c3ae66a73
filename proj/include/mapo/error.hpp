#pragma once

#include <stdexcept>
#include <string>

namespace mapo {

/// A caller broke a documented precondition (shape mismatch, bad rate, ...).
class ContractViolation : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

/// Malformed or unreadable data on disk.
class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline void require(bool condition, const std::string& message) {
  if (!condition) throw ContractViolation(message);
}

}  // namespace mapo
