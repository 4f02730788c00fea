#pragma once

#include <stdexcept>
#include <string>

namespace qhconv {

/// Missing, unreadable, truncated or malformed files.
class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Non-finite values or other numerical breakdown inside the engine.
class EngineFault : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace qhconv
