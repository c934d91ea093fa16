#pragma once

#include <stdexcept>
#include <string>

namespace tflab {

enum class ErrorKind {
  dimension,  // shape or extent mismatch
  domain,     // value outside the mathematical domain of an operation
  parameter,  // invalid hyperparameter
  state,      // operation called in the wrong lifecycle phase
  format,     // malformed checkpoint or config file
  parse,      // malformed CSV row
  data,       // well-formed but semantically invalid data
  io,         // missing or unwritable path
  usage,      // bad config key or value
  training,   // divergence during optimization
  task,       // task infeasible for the supplied data
};

const char* error_kind_name(ErrorKind kind);

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what)
      : std::runtime_error(what), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

[[noreturn]] inline void fail(ErrorKind kind, const std::string& what) {
  throw Error(kind, what);
}

}  // namespace tflab
