#include "polyavsr/grad_check.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <string>

namespace polyavsr {

GradCheckResult grad_check(const std::function<Tensor()>& fn, const std::vector<Tensor>& params,
                           double eps, std::size_t max_coords, std::uint64_t seed) {
  if (eps < 1e-7 || eps > 1e-3)
    throw ContractError("grad_check: eps " + std::to_string(eps) + " outside [1e-7, 1e-3]");

  for (auto p : params) p.zero_grad();
  Tensor loss = fn();
  const double base = loss.item();
  backward(loss);
  {
    NoGradGuard ng;
    const double again = fn().item();
    if (again != base)
      throw DeterminismError("grad_check: repeated evaluation gave " + std::to_string(again) +
                             " vs " + std::to_string(base));
  }

  std::vector<std::pair<std::size_t, std::size_t>> coords;
  for (std::size_t p = 0; p < params.size(); ++p)
    for (std::size_t i = 0; i < params[p].numel(); ++i) coords.emplace_back(p, i);
  if (max_coords != 0 && coords.size() > max_coords) {
    std::mt19937_64 rng(seed);
    std::shuffle(coords.begin(), coords.end(), rng);
    coords.resize(max_coords);
  }

  GradCheckResult result;
  const double floor = 1e-6 * std::max(1.0, std::abs(base));
  NoGradGuard ng;
  for (auto [p, i] : coords) {
    Tensor t = params[p];
    const double analytic = t.has_grad() ? t.grad_at(i) : 0.0;
    const double orig = t.at(i);
    t.set(i, orig + eps);
    const double up = fn().item();
    t.set(i, orig - eps);
    const double down = fn().item();
    t.set(i, orig);
    const double numeric = (up - down) / (2.0 * eps);
    const double denom = std::max({std::abs(analytic), std::abs(numeric), floor});
    const double rel = std::abs(analytic - numeric) / denom;
    if (rel > result.max_rel_error) {
      result.max_rel_error = rel;
      result.worst_param = p;
      result.worst_index = i;
      result.worst_analytic = analytic;
      result.worst_numeric = numeric;
    }
    ++result.coords_checked;
  }
  return result;
}

}  // namespace polyavsr
