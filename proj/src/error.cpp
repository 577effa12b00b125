#include "levspec/error.hpp"

namespace levspec {

const char* to_string(Errc code) noexcept {
  switch (code) {
    case Errc::invalid_config: return "invalid-config";
    case Errc::unstable_step: return "unstable-step";
    case Errc::aliasing: return "aliasing";
    case Errc::empty_input: return "empty-input";
    case Errc::too_short: return "too-short";
    case Errc::grid_mismatch: return "grid-mismatch";
    case Errc::insufficient_span: return "insufficient-span";
    case Errc::resolution: return "resolution";
    case Errc::grid_span: return "grid-span";
    case Errc::domain: return "domain";
    case Errc::non_positive_model: return "non-positive-model";
    case Errc::degenerate: return "degenerate";
    case Errc::missing_input: return "missing-input";
    case Errc::io: return "io";
  }
  return "unknown";
}

bool is_validation(Errc code) noexcept { return code != Errc::io; }

}  // namespace levspec
