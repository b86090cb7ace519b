#include <doctest.h>

#include <map>
#include <random>

#include "polyavsr/wer.hpp"

using namespace polyavsr;

namespace {

using Seq = std::vector<int>;

// Plain recursive Levenshtein with memoization.
std::size_t lev(const Seq& a, const Seq& b, std::size_t i, std::size_t j,
                std::map<std::pair<std::size_t, std::size_t>, std::size_t>& memo) {
  if (i == a.size()) return b.size() - j;
  if (j == b.size()) return a.size() - i;
  auto key = std::make_pair(i, j);
  if (auto it = memo.find(key); it != memo.end()) return it->second;
  std::size_t r = lev(a, b, i + 1, j + 1, memo) + (a[i] != b[j]);
  r = std::min(r, lev(a, b, i + 1, j, memo) + 1);
  r = std::min(r, lev(a, b, i, j + 1, memo) + 1);
  return memo[key] = r;
}

std::size_t oracle(const Seq& a, const Seq& b) {
  std::map<std::pair<std::size_t, std::size_t>, std::size_t> memo;
  return lev(a, b, 0, 0, memo);
}

Seq random_seq(std::mt19937_64& rng, std::size_t max_len) {
  Seq s(std::uniform_int_distribution<std::size_t>(0, max_len)(rng));
  for (auto& x : s) x = std::uniform_int_distribution<int>(0, 3)(rng);
  return s;
}

}  // namespace

TEST_CASE("wer examples") {
  CHECK(wer(Seq{1, 2, 3}, Seq{1, 2, 3}) == 0.0);
  CHECK(wer(Seq{1, 2, 3}, Seq{1, 9, 3}) == doctest::Approx(1.0 / 3));
  CHECK(wer(Seq{1, 2, 3}, Seq{}) == 1.0);
  CHECK(wer(Seq{1}, Seq{4, 5, 6}) == 3.0);
  const auto e = align(Seq{1, 2, 3, 4}, Seq{1, 3, 4, 5});
  CHECK(e.deletions == 1);
  CHECK(e.insertions == 1);
  CHECK(e.substitutions == 0);
  CHECK(e.ref_length == 4);
  CHECK(align(Seq{7}, Seq{8}).substitutions == 1);
  CHECK_THROWS_AS(wer(Seq{}, Seq{1}), UndefinedMetricError);
}

TEST_CASE("edit distance matches a recursive oracle") {
  std::mt19937_64 rng(3);
  for (int trial = 0; trial < 300; ++trial) {
    const Seq a = random_seq(rng, 8), b = random_seq(rng, 8);
    const auto e = align(a, b);
    CHECK(e.errors() == oracle(a, b));
    CHECK(e.deletions + b.size() == e.insertions + a.size());
    CHECK(edit_distance(a, b) == edit_distance(b, a));
  }
}

TEST_CASE("edit distance obeys the triangle inequality") {
  std::mt19937_64 rng(4);
  for (int trial = 0; trial < 200; ++trial) {
    const Seq a = random_seq(rng, 6), b = random_seq(rng, 6), c = random_seq(rng, 6);
    CHECK(edit_distance(a, c) <= edit_distance(a, b) + edit_distance(b, c));
    CHECK(edit_distance(a, a) == 0);
  }
}
