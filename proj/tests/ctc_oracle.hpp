#pragma once

#include <cmath>
#include <limits>
#include <vector>

// Brute-force CTC: enumerate all V^T frame labelings, collapse, and sum the
// probability of those that match the target.
namespace ctc_oracle {

inline std::vector<int> collapse(const std::vector<int>& path, int blank = 0) {
  std::vector<int> out;
  int prev = -1;
  for (int s : path) {
    if (s != prev && s != blank) out.push_back(s);
    prev = s;
  }
  return out;
}

inline double brute_force_nll(const std::vector<double>& log_probs, std::size_t T, std::size_t V,
                              const std::vector<int>& target, int blank = 0) {
  std::vector<int> path(T, 0);
  double total = 0;
  while (true) {
    if (collapse(path, blank) == target) {
      double lp = 0;
      for (std::size_t t = 0; t < T; ++t) lp += log_probs[t * V + static_cast<std::size_t>(path[t])];
      total += std::exp(lp);
    }
    std::size_t i = 0;
    while (i < T && ++path[i] == static_cast<int>(V)) path[i++] = 0;
    if (i == T) break;
  }
  return total > 0 ? -std::log(total) : std::numeric_limits<double>::infinity();
}

}  // namespace ctc_oracle
