#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace advdoodle {

enum class ErrorKind {
  domain,
  invalid_input,
  invalid_argument,
  invalid_dataset,
  corrupt_file,
  version_mismatch,
  arch_mismatch,
  numeric,
  io,
  not_found,
  refused,
};

inline std::string_view to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::domain: return "domain";
    case ErrorKind::invalid_input: return "invalid_input";
    case ErrorKind::invalid_argument: return "invalid_argument";
    case ErrorKind::invalid_dataset: return "invalid_dataset";
    case ErrorKind::corrupt_file: return "corrupt_file";
    case ErrorKind::version_mismatch: return "version_mismatch";
    case ErrorKind::arch_mismatch: return "arch_mismatch";
    case ErrorKind::numeric: return "numeric";
    case ErrorKind::io: return "io";
    case ErrorKind::not_found: return "not_found";
    case ErrorKind::refused: return "refused";
  }
  return "unknown";
}

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what)
      : std::runtime_error(std::string(to_string(kind)) + ": " + what), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

inline void check(bool cond, ErrorKind kind, const std::string& what) {
  if (!cond) throw Error(kind, what);
}

}  // namespace advdoodle
