#include "polyavsr/losses.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <memory>
#include <string>

#include "polyavsr/ops.hpp"

namespace polyavsr {

namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

double log_add(double a, double b) {
  if (a == kNegInf) return b;
  if (b == kNegInf) return a;
  const double m = std::max(a, b);
  return m + std::log1p(std::exp(-std::abs(a - b)));
}

// Forward (and optionally backward) variables over the extended target
// [blank, y1, blank, y2, ..., blank]. beta excludes the emission at t, so
// alpha_t(s) + beta_t(s) is the log mass of all paths through (t, s).
struct CtcLattice {
  std::vector<int> ext;
  std::size_t S = 0;
  std::vector<double> alpha;
  std::vector<double> beta;
  double log_p = kNegInf;
};

CtcLattice run_ctc(std::span<const double> lp, std::size_t T, std::size_t V,
                   std::span<const int> target, int blank, bool with_beta) {
  if (T == 0) throw std::invalid_argument("ctc: no frames");
  if (lp.size() != T * V)
    throw std::invalid_argument("ctc: log-prob buffer of " + std::to_string(lp.size()) +
                                " values is not T×V = " + std::to_string(T) + "×" +
                                std::to_string(V));
  if (blank < 0 || static_cast<std::size_t>(blank) >= V)
    throw std::invalid_argument("ctc: blank id outside the vocabulary");
  for (int y : target)
    if (y < 0 || static_cast<std::size_t>(y) >= V || y == blank)
      throw std::invalid_argument("ctc: target id " + std::to_string(y) +
                                  " is blank or outside the vocabulary");

  CtcLattice L;
  L.ext.reserve(2 * target.size() + 1);
  L.ext.push_back(blank);
  for (int y : target) {
    L.ext.push_back(y);
    L.ext.push_back(blank);
  }
  const std::size_t S = L.S = L.ext.size();
  const auto& ext = L.ext;
  auto at = [V, &lp](std::size_t t, int k) { return lp[t * V + static_cast<std::size_t>(k)]; };
  auto skip_allowed = [&ext, blank](std::size_t hi, std::size_t lo) {
    return ext[hi] != blank && ext[hi] != ext[lo];
  };

  L.alpha.assign(T * S, kNegInf);
  auto& A = L.alpha;
  A[0] = at(0, ext[0]);
  if (S > 1) A[1] = at(0, ext[1]);
  for (std::size_t t = 1; t < T; ++t) {
    const double* prev = &A[(t - 1) * S];
    double* cur = &A[t * S];
    for (std::size_t s = 0; s < S; ++s) {
      double a = prev[s];
      if (s >= 1) a = log_add(a, prev[s - 1]);
      if (s >= 2 && skip_allowed(s, s - 2)) a = log_add(a, prev[s - 2]);
      cur[s] = a == kNegInf ? kNegInf : a + at(t, ext[s]);
    }
  }
  L.log_p = A[(T - 1) * S + S - 1];
  if (S > 1) L.log_p = log_add(L.log_p, A[(T - 1) * S + S - 2]);

  if (with_beta) {
    L.beta.assign(T * S, kNegInf);
    auto& B = L.beta;
    B[(T - 1) * S + S - 1] = 0.0;
    if (S > 1) B[(T - 1) * S + S - 2] = 0.0;
    for (std::size_t t = T - 1; t-- > 0;) {
      const double* next = &B[(t + 1) * S];
      double* cur = &B[t * S];
      for (std::size_t s = 0; s < S; ++s) {
        double b = next[s] + at(t + 1, ext[s]);
        if (s + 1 < S) b = log_add(b, next[s + 1] + at(t + 1, ext[s + 1]));
        if (s + 2 < S && skip_allowed(s + 2, s)) b = log_add(b, next[s + 2] + at(t + 1, ext[s + 2]));
        cur[s] = b;
      }
    }
  }
  return L;
}

std::vector<double> grad_from_lattice(const CtcLattice& L, std::span<const double> lp,
                                      std::size_t T, std::size_t V) {
  std::vector<double> grad(T * V);
  std::vector<double> occ(V);
  for (std::size_t t = 0; t < T; ++t) {
    std::fill(occ.begin(), occ.end(), kNegInf);
    for (std::size_t s = 0; s < L.S; ++s) {
      const auto k = static_cast<std::size_t>(L.ext[s]);
      occ[k] = log_add(occ[k], L.alpha[t * L.S + s] + L.beta[t * L.S + s]);
    }
    for (std::size_t k = 0; k < V; ++k) {
      const double o = occ[k] == kNegInf ? 0.0 : std::exp(occ[k] - L.log_p);
      grad[t * V + k] = std::exp(lp[t * V + k]) - o;
    }
  }
  return grad;
}

}  // namespace

double ctc_loss(std::span<const double> log_probs, std::size_t T, std::size_t V,
                std::span<const int> target, int blank) {
  const auto L = run_ctc(log_probs, T, V, target, blank, false);
  return L.log_p == kNegInf ? std::numeric_limits<double>::infinity() : -L.log_p;
}

std::vector<double> ctc_grad(std::span<const double> log_probs, std::size_t T, std::size_t V,
                             std::span<const int> target, int blank) {
  const auto L = run_ctc(log_probs, T, V, target, blank, true);
  if (L.log_p == kNegInf)
    throw GradientError("ctc_grad: target of length " + std::to_string(target.size()) +
                        " cannot be emitted in " + std::to_string(T) + " frames");
  return grad_from_lattice(L, log_probs, T, V);
}

Tensor ctc_loss_op(const Tensor& logits, std::span<const int> target, int blank) {
  if (logits.rank() != 2) throw DimensionError("ctc_loss: logits must be T×V");
  const std::size_t T = logits.dim(0), V = logits.dim(1);

  // Row-wise log_softmax in double.
  auto lp = std::make_shared<std::vector<double>>(T * V);
  const auto x = logits.to_vector();
  for (std::size_t t = 0; t < T; ++t) {
    double mx = kNegInf;
    for (std::size_t k = 0; k < V; ++k) mx = std::max(mx, x[t * V + k]);
    double s = 0;
    for (std::size_t k = 0; k < V; ++k) s += std::exp(x[t * V + k] - mx);
    const double lse = mx + std::log(s);
    for (std::size_t k = 0; k < V; ++k) (*lp)[t * V + k] = x[t * V + k] - lse;
  }
  std::vector<int> tgt(target.begin(), target.end());
  const double loss = ctc_loss(*lp, T, V, tgt, blank);

  Tensor out = make_result({1}, logits.dtype(), {logits}, [logits, lp, tgt, T, V, blank](Node& o) {
    const auto g = ctc_grad(*lp, T, V, tgt, blank);
    const double up = o.grad.get(0);
    dispatch(o.dtype(), [&](auto r) {
      using R = decltype(r);
      auto gl = logits.node()->ensure_grad().as<R>();
      for (std::size_t i = 0; i < g.size(); ++i) gl[i] += static_cast<R>(up * g[i]);
    });
  });
  out.set(0, loss);
  return out;
}

Tensor attention_loss(const Tensor& step_log_probs, std::span<const int> target_with_eos) {
  if (step_log_probs.rank() != 2 || step_log_probs.dim(0) != target_with_eos.size())
    throw SequenceAlignmentError("attention_loss: " + shape_str(step_log_probs.shape()) +
                                 " prediction rows for a target of length " +
                                 std::to_string(target_with_eos.size()));
  return nll_loss(step_log_probs, target_with_eos);
}

std::vector<double> balance_weights(std::span<const LanguageLabel> batch_labels) {
  if (batch_labels.empty()) throw ContractError("balance_weights: empty batch");
  std::map<int, std::size_t> counts;
  for (const auto& l : batch_labels) ++counts[l.id];
  const double B = static_cast<double>(batch_labels.size());
  std::vector<double> gamma;
  gamma.reserve(batch_labels.size());
  for (const auto& l : batch_labels)
    gamma.push_back(1.0 / std::sqrt(static_cast<double>(counts[l.id]) / B));
  return gamma;
}

namespace {
void check_weights(double gamma, LossWeights w) {
  if (!(w.alpha >= 0.0 && w.alpha <= 1.0))
    throw ContractError("total_loss: alpha must lie in [0, 1]");
  if (!(w.beta >= 0.0)) throw ContractError("total_loss: beta must be non-negative");
  if (!(gamma > 0.0)) throw ContractError("total_loss: gamma must be positive");
}
}  // namespace

Tensor total_loss(const Tensor& ctc, const Tensor& att, const Tensor& cls, double gamma,
                  LossWeights w) {
  check_weights(gamma, w);
  if (!std::isfinite(ctc.item()) || !std::isfinite(att.item()) || !std::isfinite(cls.item()))
    throw NonFiniteLossError("total_loss: non-finite component (ctc " +
                             std::to_string(ctc.item()) + ", att " + std::to_string(att.item()) +
                             ", cls " + std::to_string(cls.item()) + ")");
  Tensor inner = add(add(scale(ctc, w.alpha), scale(att, 1.0 - w.alpha)), scale(cls, w.beta));
  return scale(inner, gamma);
}

double total_loss(double ctc, double att, double cls, double gamma, LossWeights w) {
  check_weights(gamma, w);
  if (!std::isfinite(ctc) || !std::isfinite(att) || !std::isfinite(cls))
    throw NonFiniteLossError("total_loss: non-finite component");
  return gamma * (w.alpha * ctc + (1.0 - w.alpha) * att + w.beta * cls);
}

}  // namespace polyavsr
