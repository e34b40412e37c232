#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "ambiseg/diffcore.hpp"

namespace ambiseg::diff {

struct GradCheckResult {
  /// max over checked variables of ||analytic - numeric|| / max(||analytic||, ||numeric||, floor)
  double max_relative_error = 0.0;
  std::string worst_variable;
  std::size_t entries_checked = 0;
};

struct GradCheckOptions {
  double step = 1e-5;
  /// Check at most this many entries per variable, chosen by a seeded draw.
  std::size_t max_entries = 64;
  std::uint64_t seed = 1;
  double floor = 1e-10;
};

/// Compares reverse-mode gradients of a scalar expression against central
/// finite differences.
GradCheckResult check_gradient(const Expr& root, const Bindings& bindings,
                               const std::vector<std::string>& wrt,
                               const GradCheckOptions& options = {});

}  // namespace ambiseg::diff
