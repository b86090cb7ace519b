#include "polyavsr/optim.hpp"

#include <cmath>

namespace polyavsr {

Adam::Adam(std::vector<NamedTensor> params, AdamConfig config) : config_(config) {
  slots_.reserve(params.size());
  for (auto& p : params) {
    const std::size_t n = p.tensor.numel();
    slots_.push_back({std::move(p.name), p.tensor, std::vector<double>(n, 0.0),
                      std::vector<double>(n, 0.0)});
  }
}

void Adam::step() {
  for (const auto& s : slots_)
    if (!s.param.has_grad())
      throw IncompleteGradientError("parameter '" + s.name + "' has no gradient");
  ++step_;
  const double b1 = config_.beta1, b2 = config_.beta2;
  const double c1 = 1.0 - std::pow(b1, static_cast<double>(step_));
  const double c2 = 1.0 - std::pow(b2, static_cast<double>(step_));
  for (auto& s : slots_) {
    dispatch(s.param.dtype(), [&](auto r) {
      using R = decltype(r);
      auto p = s.param.data<R>();
      auto g = s.param.grad_buffer().as<const R>();
      for (std::size_t i = 0; i < p.size(); ++i) {
        const double gi = g[i];
        s.m[i] = b1 * s.m[i] + (1.0 - b1) * gi;
        s.v[i] = b2 * s.v[i] + (1.0 - b2) * gi * gi;
        const double mhat = s.m[i] / c1;
        const double vhat = s.v[i] / c2;
        p[i] = static_cast<R>(static_cast<double>(p[i]) -
                              config_.lr * mhat / (std::sqrt(vhat) + config_.eps));
      }
    });
  }
}

void Adam::zero_grad() {
  for (auto& s : slots_) s.param.zero_grad();
}

}  // namespace polyavsr
