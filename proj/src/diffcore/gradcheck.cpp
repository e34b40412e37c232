#include "ambiseg/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

namespace ambiseg::diff {

GradCheckResult check_gradient(const Expr& root, const Bindings& bindings,
                               const std::vector<std::string>& wrt,
                               const GradCheckOptions& options) {
  const Gradients analytic = gradient(root, bindings, wrt);
  GradCheckResult result;
  std::mt19937_64 rng(options.seed);
  Bindings probe = bindings;
  for (const auto& name : wrt) {
    Tensor& v = probe.at(name);
    const Tensor& a = analytic.at(name);
    std::vector<std::size_t> idx(v.size());
    std::iota(idx.begin(), idx.end(), 0);
    if (idx.size() > options.max_entries) {
      std::shuffle(idx.begin(), idx.end(), rng);
      idx.resize(options.max_entries);
    }
    double diff2 = 0, a2 = 0, n2 = 0;
    for (std::size_t i : idx) {
      const Real orig = v[i];
      v[i] = orig + options.step;
      const Real up = evaluate(root, probe).item();
      v[i] = orig - options.step;
      const Real down = evaluate(root, probe).item();
      v[i] = orig;
      const double numeric = (up - down) / (2 * options.step);
      diff2 += (a[i] - numeric) * (a[i] - numeric);
      a2 += a[i] * a[i];
      n2 += numeric * numeric;
    }
    const double rel =
        std::sqrt(diff2) / std::max({std::sqrt(a2), std::sqrt(n2), options.floor});
    result.entries_checked += idx.size();
    if (rel >= result.max_relative_error) {
      result.max_relative_error = rel;
      result.worst_variable = name;
    }
  }
  return result;
}

}  // namespace ambiseg::diff
