#pragma once

#include <sstream>
#include <stdexcept>
#include <string>

namespace lgmoe {

// Contract violations and numeric failures surface as lgmoe::Error; the CLI
// maps them to a nonzero exit code.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace lgmoe

#define LGMOE_CHECK(cond, msg)                \
  do {                                        \
    if (!(cond)) {                            \
      std::ostringstream oss_;                \
      oss_ << msg;                            \
      throw ::lgmoe::Error(oss_.str());       \
    }                                         \
  } while (0)
