#pragma once

#include <cstddef>
#include <span>
#include <stdexcept>

namespace polyavsr {

class UndefinedMetricError : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

struct EditCounts {
  std::size_t substitutions = 0;
  std::size_t deletions = 0;
  std::size_t insertions = 0;
  std::size_t ref_length = 0;

  std::size_t errors() const { return substitutions + deletions + insertions; }
};

// Minimum-edit alignment of hyp against ref. Among equal-cost alignments
// substitutions are preferred over deletion+insertion pairs.
EditCounts align(std::span<const int> ref, std::span<const int> hyp);

std::size_t edit_distance(std::span<const int> ref, std::span<const int> hyp);

// (S + D + I) / |ref|; may exceed 1. Throws UndefinedMetricError on empty ref.
double wer(std::span<const int> ref, std::span<const int> hyp);

}  // namespace polyavsr
