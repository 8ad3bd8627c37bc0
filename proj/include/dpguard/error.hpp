#pragma once

#include <stdexcept>
#include <string>

namespace dpguard {

enum class ErrorKind {
  kParse,       // malformed input document
  kValidation,  // well-formed input violating an invariant
  kConfig,
  kUsage,
  kIo,
  kDecode,
  kShape,
  kTransport,
  kAuth,
  kMutation,
  kRound,
  kRuntime,
};

const char* to_string(ErrorKind kind);

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& message)
      : std::runtime_error(message), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

  // Errors caused by the caller's input rather than the environment.
  bool is_validation() const noexcept {
    return kind_ == ErrorKind::kParse || kind_ == ErrorKind::kValidation ||
           kind_ == ErrorKind::kConfig || kind_ == ErrorKind::kUsage;
  }

 private:
  ErrorKind kind_;
};

}  // namespace dpguard
