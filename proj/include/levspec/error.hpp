#pragma once

#include <stdexcept>
#include <string>

namespace levspec {

enum class Errc {
  invalid_config,
  unstable_step,
  aliasing,
  empty_input,
  too_short,
  grid_mismatch,
  insufficient_span,
  resolution,
  grid_span,
  domain,
  non_positive_model,
  degenerate,
  missing_input,
  io,
};

const char* to_string(Errc code) noexcept;

// Validation-class errors map to CLI exit code 2; io failures map to 1.
bool is_validation(Errc code) noexcept;

class Error : public std::runtime_error {
 public:
  Error(Errc code, const std::string& what)
      : std::runtime_error(std::string(to_string(code)) + ": " + what), code_(code) {}

  Errc code() const noexcept { return code_; }

 private:
  Errc code_;
};

inline void require(bool ok, Errc code, const std::string& what) {
  if (!ok) throw Error(code, what);
}

}  // namespace levspec
