#include "polyavsr/wer.hpp"

#include <algorithm>
#include <vector>

namespace polyavsr {

namespace {

struct Cell {
  std::size_t cost = 0;
  std::size_t subs = 0, dels = 0, ins = 0;
};

bool cheaper(const Cell& a, const Cell& b) {
  if (a.cost != b.cost) return a.cost < b.cost;
  return a.subs > b.subs;
}

}  // namespace

EditCounts align(std::span<const int> ref, std::span<const int> hyp) {
  const std::size_t n = ref.size(), m = hyp.size();
  // Two rolling rows over hyp positions.
  std::vector<Cell> prev(m + 1), cur(m + 1);
  for (std::size_t j = 0; j <= m; ++j) prev[j] = {j, 0, 0, j};
  for (std::size_t i = 1; i <= n; ++i) {
    cur[0] = {i, 0, i, 0};
    for (std::size_t j = 1; j <= m; ++j) {
      Cell diag = prev[j - 1];
      if (ref[i - 1] != hyp[j - 1]) {
        ++diag.cost;
        ++diag.subs;
      }
      Cell del = prev[j];
      ++del.cost;
      ++del.dels;
      Cell ins = cur[j - 1];
      ++ins.cost;
      ++ins.ins;
      Cell best = diag;
      if (cheaper(del, best)) best = del;
      if (cheaper(ins, best)) best = ins;
      cur[j] = best;
    }
    std::swap(prev, cur);
  }
  const Cell& end = prev[m];
  return {end.subs, end.dels, end.ins, n};
}

std::size_t edit_distance(std::span<const int> ref, std::span<const int> hyp) {
  return align(ref, hyp).errors();
}

double wer(std::span<const int> ref, std::span<const int> hyp) {
  if (ref.empty()) throw UndefinedMetricError("wer: empty reference");
  return static_cast<double>(edit_distance(ref, hyp)) / static_cast<double>(ref.size());
}

}  // namespace polyavsr
