#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace pdnrl {

enum class ErrorKind {
  InvalidRange,
  IncompatibleGrids,
  CascadeSingularity,
  NoSuchPort,
  InvalidSelection,
  SingularSystem,
  Capacity,
  Format,
  Shape,
  Contract,
  ExhaustedActions,
  Infeasible,
  Config,
  Usage,
  Io,
};

const char* to_string(ErrorKind kind);

// Every failure raised by the library carries one of the kinds above so the
// CLI can map it onto an exit code and tests can assert on the category.
class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what)
      : std::runtime_error(std::string(to_string(kind)) + ": " + what), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

class CascadeSingularity : public Error {
 public:
  CascadeSingularity(std::size_t frequency_index, const std::string& what)
      : Error(ErrorKind::CascadeSingularity,
              what + " (frequency index " + std::to_string(frequency_index) + ")"),
        frequency_index_(frequency_index) {}

  std::size_t frequency_index() const noexcept { return frequency_index_; }

 private:
  std::size_t frequency_index_;
};

[[noreturn]] inline void fail(ErrorKind kind, const std::string& what) { throw Error(kind, what); }

inline void expects(bool cond, ErrorKind kind, const std::string& what) {
  if (!cond) fail(kind, what);
}

}  // namespace pdnrl
