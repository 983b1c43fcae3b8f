#pragma once

#include <cstddef>
#include <optional>
#include <stdexcept>
#include <string>

namespace linresp {

enum class ErrorKind {
  config,
  precondition,
  numerical_degeneracy,
  basin_escape,
  insufficient_data,
  hyperbolicity,
  unsupported,
};

inline const char* to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::config: return "config";
    case ErrorKind::precondition: return "precondition";
    case ErrorKind::numerical_degeneracy: return "numerical_degeneracy";
    case ErrorKind::basin_escape: return "basin_escape";
    case ErrorKind::insufficient_data: return "insufficient_data";
    case ErrorKind::hyperbolicity: return "hyperbolicity";
    case ErrorKind::unsupported: return "unsupported";
  }
  return "unknown";
}

/// Every failure raised by the library. `step()` carries the orbit or
/// iteration index for escapes and degeneracies.
class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& message,
        std::optional<std::size_t> step = std::nullopt)
      : std::runtime_error(message), kind_(kind), step_(step) {}

  ErrorKind kind() const noexcept { return kind_; }
  std::optional<std::size_t> step() const noexcept { return step_; }

 private:
  ErrorKind kind_;
  std::optional<std::size_t> step_;
};

[[noreturn]] inline void fail(ErrorKind kind, const std::string& message,
                              std::optional<std::size_t> step = std::nullopt) {
  throw Error(kind, message, step);
}

inline void require(bool condition, const std::string& message) {
  if (!condition) fail(ErrorKind::precondition, message);
}

}  // namespace linresp
