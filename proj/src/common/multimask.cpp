#include "ambiseg/multimask.hpp"

#include <stdexcept>

namespace ambiseg {

std::size_t MultiMaskOutput::best_scored() const {
  std::size_t best = 0;
  for (std::size_t i = 1; i < scores.size(); ++i) {
    if (scores[i] > scores[best]) best = i;
  }
  return best;
}

void MultiMaskOutput::validate() const {
  if (masks.empty()) throw std::invalid_argument("multi-mask output has no heads");
  if (scores.size() != masks.size()) {
    throw std::invalid_argument("multi-mask output has " + std::to_string(masks.size()) +
                                " masks but " + std::to_string(scores.size()) + " scores");
  }
  for (const auto& m : masks) {
    if (!m.same_geometry(masks.front()) || m.channels() != 1) {
      throw std::invalid_argument("multi-mask output masks differ in geometry");
    }
    for (Real v : m.storage()) {
      if (!(v > 0.0 && v < 1.0)) throw std::invalid_argument("mask value outside (0,1)");
    }
  }
  for (Real s : scores) {
    if (!(s >= 0.0 && s <= 1.0)) throw std::invalid_argument("score outside [0,1]");
  }
}

}  // namespace ambiseg
