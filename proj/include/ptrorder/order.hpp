#pragma once

#include <cstddef>
#include <vector>

namespace ptrorder {

// An output sequence of input positions. In variable-length decoding the
// sequence is terminated by the stop action, recorded in `stopped`.
struct Order {
  std::vector<std::size_t> positions;
  bool stopped = false;
  double log_prob = 0.0;

  std::size_t size() const { return positions.size(); }
  bool empty() const { return positions.empty(); }
};

// True when no position appears twice.
inline bool distinct_positions(const std::vector<std::size_t>& positions) {
  std::vector<bool> seen;
  for (std::size_t p : positions) {
    if (p >= seen.size()) seen.resize(p + 1, false);
    if (seen[p]) return false;
    seen[p] = true;
  }
  return true;
}

}  // namespace ptrorder
