#pragma once

// The `ambiseg` command line: verb dispatch over the shell commands plus the
// metric-oracle comparison.

#include <cstdint>
#include <map>
#include <ostream>
#include <string>
#include <vector>

#include "ambiseg/raster.hpp"

namespace ambiseg::cli {

struct OracleReport {
  int pairs = 0;
  Real tolerance = 1e-9;
  std::map<std::string, Real> max_diff;  // per metric, fast vs naive

  bool pass() const;
};

/// Random (prediction, gt) pairs at size x size, every metric compared with
/// the naive implementation.
OracleReport run_oracle(std::uint64_t seed, int pairs = 200, std::size_t size = 32);

/// Exit status: 0 on success, nonzero on any error.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace ambiseg::cli
