#pragma once

#include <cstddef>
#include <functional>
#include <string>

namespace seqplace {

struct SelftestResult {
  std::size_t passed = 0;
  std::size_t failed = 0;

  bool ok() const { return failed == 0; }
};

/**
 * Runs the built-in invariance and gradient suite on small fixtures:
 * projection geometry, shift commutation, overlap counting, reverse-mode
 * gradients against finite differences, pooling permutation invariance,
 * stream/batch agreement, and yaw invariance of the descriptor. Each check
 * reports one line through the callback. Intended as a fast post-install
 * sanity gate, not a replacement for the unit tests.
 */
SelftestResult run_selftest(const std::function<void(const std::string&)>& report);

}  // namespace seqplace
