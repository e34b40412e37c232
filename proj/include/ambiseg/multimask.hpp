#pragma once

#include <cstddef>
#include <vector>

#include "ambiseg/raster.hpp"

namespace ambiseg {

/// N soft masks in (0,1)^{HxW} and N predicted IoU scores in [0,1].
struct MultiMaskOutput {
  std::vector<Mask> masks;
  std::vector<Real> scores;

  std::size_t heads() const { return masks.size(); }
  /// Index of the highest predicted score, lowest index on ties.
  std::size_t best_scored() const;
  /// Throws std::invalid_argument when counts, geometry or value ranges are off.
  void validate() const;
};

}  // namespace ambiseg
