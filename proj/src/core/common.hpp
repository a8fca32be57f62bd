#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

namespace tict {

// Error taxonomy shared by the library, the C API (as status codes), and the CLI
// (as exit codes).
enum class ErrCode {
  kDimension,      // shape/rank mismatch between tensors
  kInput,          // malformed or out-of-domain caller data
  kConfig,         // invalid configuration combination
  kCapacity,       // class count exceeds 2^n_bit
  kContract,       // operation precondition violated
  kIndex,          // out-of-range index
  kParse,          // malformed file content
  kIo,             // filesystem failure
  kNumeric,        // non-finite value where finite required
};

class TictError : public std::runtime_error {
 public:
  TictError(ErrCode code, const std::string& msg)
      : std::runtime_error(msg), code_(code) {}
  ErrCode code() const { return code_; }

 private:
  ErrCode code_;
};

[[noreturn]] inline void fail(ErrCode code, const std::string& msg) {
  throw TictError(code, msg);
}

inline constexpr const char* kVersion = "0.1.0";

}  // namespace tict
