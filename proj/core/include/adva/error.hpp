#pragma once

#include <stdexcept>
#include <string>

namespace adva {

/// Thrown for every contract violation in the library: bad shapes, malformed
/// files, invalid configs, numerical blowups. The message names the offender.
class Error : public std::runtime_error {
 public:
  explicit Error(const std::string& what) : std::runtime_error(what) {}
};

[[noreturn]] inline void fail(const std::string& msg) { throw Error(msg); }

inline void require(bool cond, const std::string& msg) {
  if (!cond) fail(msg);
}

}  // namespace adva
