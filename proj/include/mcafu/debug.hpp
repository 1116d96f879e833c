#pragma once

#include <cstdlib>

#include "mcafu/var.hpp"

namespace mcafu {

/// Post-forward NaN/Inf guard. Off by default; tests and the harness's
/// --check-finite flag turn it on.
inline bool& finite_checks_enabled() {
  static bool enabled = std::getenv("MCAFU_CHECK_FINITE") != nullptr;
  return enabled;
}

template <typename T>
inline void debug_check_finite(const char* who, const Var<T>& v) {
  if (!finite_checks_enabled()) return;
  if (!all_finite(v.val()))
    throw NumericError(std::string(who) + ": non-finite values in output " + shape_str(v.shape()));
}

}  // namespace mcafu
