#pragma once

#include <stdexcept>
#include <string>

namespace peka {

enum class ErrorCode {
  invalid_config,   // bad flags / config values / violated preconditions
  shape_mismatch,
  format,           // malformed file contents
  truncated,        // file shorter than its header promises
  io,
  numeric,          // NaN loss, singular system, infinite divergence
  internal,
};

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what) : std::runtime_error(what), code_(code) {}
  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

[[noreturn]] inline void fail(ErrorCode code, const std::string& what) { throw Error(code, what); }

inline void require(bool cond, const std::string& what) {
  if (!cond) fail(ErrorCode::invalid_config, what);
}

}  // namespace peka
