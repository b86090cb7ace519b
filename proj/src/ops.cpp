#include "polyavsr/ops.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <memory>
#include <numeric>
#include <string>

#include "kernels.hpp"

namespace polyavsr {

namespace {

void require_rank(const Tensor& t, std::size_t r, const char* op) {
  if (t.rank() != r)
    throw DimensionError(std::string(op) + ": expected rank " + std::to_string(r) + ", got " +
                         shape_str(t.shape()));
}

void require_same_dtype(const Tensor& a, const Tensor& b, const char* op) {
  if (a.dtype() != b.dtype())
    throw ContractError(std::string(op) + ": dtype mismatch " + dtype_name(a.dtype()) + " vs " +
                        dtype_name(b.dtype()));
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape())
    throw DimensionError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
}

template <class R>
std::span<R> grad_of(const Tensor& t) {
  return t.node()->ensure_grad().as<R>();
}

template <class R>
std::span<const R> out_grad(Node& o) {
  return o.grad.as<const R>();
}

}  // namespace

Tensor matmul(const Tensor& a, const Tensor& b) {
  require_rank(a, 2, "matmul");
  require_rank(b, 2, "matmul");
  require_same_dtype(a, b, "matmul");
  const std::size_t M = a.dim(0), K = a.dim(1), N = b.dim(1);
  if (b.dim(0) != K)
    throw DimensionError("matmul: inner extents differ, " + shape_str(a.shape()) + " x " +
                         shape_str(b.shape()));
  Tensor out = make_result({M, N}, a.dtype(), {a, b}, [a, b, M, K, N](Node& o) {
    dispatch(o.dtype(), [&](auto r) {
      using R = decltype(r);
      auto g = out_grad<R>(o);
      if (a.requires_grad())
        kernels::gemm_nt<R>(M, K, N, g.data(), b.data<R>().data(), grad_of<R>(a).data());
      if (b.requires_grad())
        kernels::gemm_tn<R>(K, N, M, a.data<R>().data(), g.data(), grad_of<R>(b).data());
    });
  });
  dispatch(a.dtype(), [&](auto r) {
    using R = decltype(r);
    kernels::gemm_nn<R>(M, N, K, a.data<R>().data(), b.data<R>().data(), out.data<R>().data());
  });
  return out;
}

Tensor linear(const Tensor& x, const Tensor& w, const Tensor& bias) {
  require_rank(x, 2, "linear");
  require_rank(w, 2, "linear");
  require_same_dtype(x, w, "linear");
  const std::size_t M = x.dim(0), K = x.dim(1), N = w.dim(1);
  if (w.dim(0) != K)
    throw DimensionError("linear: input " + shape_str(x.shape()) + " vs weight " +
                         shape_str(w.shape()));
  const bool has_bias = bias.defined();
  if (has_bias && (bias.numel() != N))
    throw DimensionError("linear: bias " + shape_str(bias.shape()) + " vs output width " +
                         std::to_string(N));
  std::vector<Tensor> inputs{x, w};
  if (has_bias) inputs.push_back(bias);
  Tensor out = make_result({M, N}, x.dtype(), inputs, [x, w, bias, has_bias, M, K, N](Node& o) {
    dispatch(o.dtype(), [&](auto r) {
      using R = decltype(r);
      auto g = out_grad<R>(o);
      if (x.requires_grad())
        kernels::gemm_nt<R>(M, K, N, g.data(), w.data<R>().data(), grad_of<R>(x).data());
      if (w.requires_grad())
        kernels::gemm_tn<R>(K, N, M, x.data<R>().data(), g.data(), grad_of<R>(w).data());
      if (has_bias && bias.requires_grad()) {
        auto gb = grad_of<R>(bias);
        for (std::size_t i = 0; i < M; ++i)
          for (std::size_t j = 0; j < N; ++j) gb[j] += g[i * N + j];
      }
    });
  });
  dispatch(x.dtype(), [&](auto r) {
    using R = decltype(r);
    auto y = out.data<R>();
    if (has_bias) {
      auto b = bias.data<R>();
      for (std::size_t i = 0; i < M; ++i)
        for (std::size_t j = 0; j < N; ++j) y[i * N + j] = b[j];
    }
    kernels::gemm_nn<R>(M, N, K, x.data<R>().data(), w.data<R>().data(), y.data());
  });
  return out;
}

namespace {

// Shared body for same-shape binary elementwise ops.
template <class Fwd, class DA, class DB>
Tensor elementwise(const Tensor& a, const Tensor& b, const char* name, Fwd fwd, DA da, DB db) {
  require_same_dtype(a, b, name);
  require_same_shape(a, b, name);
  Tensor out = make_result(a.shape(), a.dtype(), {a, b}, [a, b, da, db](Node& o) {
    dispatch(o.dtype(), [&](auto r) {
      using R = decltype(r);
      auto g = out_grad<R>(o);
      auto av = a.data<R>();
      auto bv = b.data<R>();
      if (a.requires_grad()) {
        auto ga = grad_of<R>(a);
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += da(g[i], av[i], bv[i]);
      }
      if (b.requires_grad()) {
        auto gb = grad_of<R>(b);
        for (std::size_t i = 0; i < g.size(); ++i) gb[i] += db(g[i], av[i], bv[i]);
      }
    });
  });
  dispatch(a.dtype(), [&](auto r) {
    using R = decltype(r);
    auto y = out.data<R>();
    auto av = a.data<R>();
    auto bv = b.data<R>();
    for (std::size_t i = 0; i < y.size(); ++i) y[i] = fwd(av[i], bv[i]);
  });
  return out;
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
  return elementwise(
      a, b, "add", [](auto x, auto y) { return x + y; }, [](auto g, auto, auto) { return g; },
      [](auto g, auto, auto) { return g; });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  return elementwise(
      a, b, "sub", [](auto x, auto y) { return x - y; }, [](auto g, auto, auto) { return g; },
      [](auto g, auto, auto) { return -g; });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  return elementwise(
      a, b, "mul", [](auto x, auto y) { return x * y; }, [](auto g, auto, auto y) { return g * y; },
      [](auto g, auto x, auto) { return g * x; });
}

Tensor scale(const Tensor& a, double s) {
  Tensor out = make_result(a.shape(), a.dtype(), {a}, [a, s](Node& o) {
    dispatch(o.dtype(), [&](auto r) {
      using R = decltype(r);
      auto g = out_grad<R>(o);
      auto ga = grad_of<R>(a);
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += static_cast<R>(s) * g[i];
    });
  });
  dispatch(a.dtype(), [&](auto r) {
    using R = decltype(r);
    auto y = out.data<R>();
    auto x = a.data<R>();
    for (std::size_t i = 0; i < y.size(); ++i) y[i] = static_cast<R>(s) * x[i];
  });
  return out;
}

Tensor add_rowvec(const Tensor& x, const Tensor& row) {
  require_rank(x, 2, "add_rowvec");
  require_same_dtype(x, row, "add_rowvec");
  const std::size_t M = x.dim(0), N = x.dim(1);
  if (row.numel() != N)
    throw DimensionError("add_rowvec: row " + shape_str(row.shape()) + " vs " +
                         shape_str(x.shape()));
  Tensor out = make_result(x.shape(), x.dtype(), {x, row}, [x, row, M, N](Node& o) {
    dispatch(o.dtype(), [&](auto r) {
      using R = decltype(r);
      auto g = out_grad<R>(o);
      if (x.requires_grad()) {
        auto gx = grad_of<R>(x);
        for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
      }
      if (row.requires_grad()) {
        auto gr = grad_of<R>(row);
        for (std::size_t i = 0; i < M; ++i)
          for (std::size_t j = 0; j < N; ++j) gr[j] += g[i * N + j];
      }
    });
  });
  dispatch(x.dtype(), [&](auto r) {
    using R = decltype(r);
    auto y = out.data<R>();
    auto xv = x.data<R>();
    auto rv = row.data<R>();
    for (std::size_t i = 0; i < M; ++i)
      for (std::size_t j = 0; j < N; ++j) y[i * N + j] = xv[i * N + j] + rv[j];
  });
  return out;
}

Tensor add_constant(const Tensor& x, std::span<const double> c) {
  if (c.size() != x.numel())
    throw DimensionError("add_constant: " + std::to_string(c.size()) + " values for " +
                         shape_str(x.shape()));
  Tensor out = make_result(x.shape(), x.dtype(), {x}, [x](Node& o) {
    dispatch(o.dtype(), [&](auto r) {
      using R = decltype(r);
      auto g = out_grad<R>(o);
      auto gx = grad_of<R>(x);
      for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
    });
  });
  dispatch(x.dtype(), [&](auto r) {
    using R = decltype(r);
    auto y = out.data<R>();
    auto xv = x.data<R>();
    for (std::size_t i = 0; i < y.size(); ++i) y[i] = xv[i] + static_cast<R>(c[i]);
  });
  return out;
}

Tensor relu(const Tensor& x) {
  Tensor out = make_result(x.shape(), x.dtype(), {x}, [x](Node& o) {
    dispatch(o.dtype(), [&](auto r) {
      using R = decltype(r);
      auto g = out_grad<R>(o);
      auto xv = x.data<R>();
      auto gx = grad_of<R>(x);
      for (std::size_t i = 0; i < g.size(); ++i)
        if (xv[i] > R(0)) gx[i] += g[i];
    });
  });
  dispatch(x.dtype(), [&](auto r) {
    using R = decltype(r);
    auto y = out.data<R>();
    auto xv = x.data<R>();
    for (std::size_t i = 0; i < y.size(); ++i) y[i] = xv[i] > R(0) ? xv[i] : R(0);
  });
  return out;
}

Tensor sum(const Tensor& x) {
  Tensor out = make_result({1}, x.dtype(), {x}, [x](Node& o) {
    dispatch(o.dtype(), [&](auto r) {
      using R = decltype(r);
      const R g = out_grad<R>(o)[0];
      auto gx = grad_of<R>(x);
      for (auto& v : gx) v += g;
    });
  });
  dispatch(x.dtype(), [&](auto r) {
    using R = decltype(r);
    R s = 0;
    for (auto v : x.data<R>()) s += v;
    out.data<R>()[0] = s;
  });
  return out;
}

Tensor mean_axis(const Tensor& x, std::size_t axis) {
  require_rank(x, 2, "mean_axis");
  if (axis > 1) throw DimensionError("mean_axis: axis must be 0 or 1");
  const std::size_t M = x.dim(0), N = x.dim(1);
  Shape shape = axis == 0 ? Shape{1, N} : Shape{M, 1};
  Tensor out = make_result(shape, x.dtype(), {x}, [x, axis, M, N](Node& o) {
    dispatch(o.dtype(), [&](auto r) {
      using R = decltype(r);
      auto g = out_grad<R>(o);
      auto gx = grad_of<R>(x);
      if (axis == 0) {
        for (std::size_t i = 0; i < M; ++i)
          for (std::size_t j = 0; j < N; ++j) gx[i * N + j] += g[j] / static_cast<R>(M);
      } else {
        for (std::size_t i = 0; i < M; ++i)
          for (std::size_t j = 0; j < N; ++j) gx[i * N + j] += g[i] / static_cast<R>(N);
      }
    });
  });
  dispatch(x.dtype(), [&](auto r) {
    using R = decltype(r);
    auto y = out.data<R>();
    auto xv = x.data<R>();
    if (axis == 0) {
      for (std::size_t i = 0; i < M; ++i)
        for (std::size_t j = 0; j < N; ++j) y[j] += xv[i * N + j];
      for (auto& v : y) v /= static_cast<R>(M);
    } else {
      for (std::size_t i = 0; i < M; ++i) {
        R s = 0;
        for (std::size_t j = 0; j < N; ++j) s += xv[i * N + j];
        y[i] = s / static_cast<R>(N);
      }
    }
  });
  return out;
}

Tensor transpose(const Tensor& x) {
  require_rank(x, 2, "transpose");
  const std::size_t M = x.dim(0), N = x.dim(1);
  Tensor out = make_result({N, M}, x.dtype(), {x}, [x, M, N](Node& o) {
    dispatch(o.dtype(), [&](auto r) {
      using R = decltype(r);
      auto g = out_grad<R>(o);
      auto gx = grad_of<R>(x);
      for (std::size_t i = 0; i < M; ++i)
        for (std::size_t j = 0; j < N; ++j) gx[i * N + j] += g[j * M + i];
    });
  });
  dispatch(x.dtype(), [&](auto r) {
    using R = decltype(r);
    auto y = out.data<R>();
    auto xv = x.data<R>();
    for (std::size_t i = 0; i < M; ++i)
      for (std::size_t j = 0; j < N; ++j) y[j * M + i] = xv[i * N + j];
  });
  return out;
}

Tensor reshape(const Tensor& x, const Shape& shape) {
  if (shape_numel(shape) != x.numel())
    throw DimensionError("reshape: " + shape_str(x.shape()) + " to " + shape_str(shape));
  Tensor out = make_result(shape, x.dtype(), {x}, [x](Node& o) {
    dispatch(o.dtype(), [&](auto r) {
      using R = decltype(r);
      auto g = out_grad<R>(o);
      auto gx = grad_of<R>(x);
      for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
    });
  });
  out.value_buffer() = x.value_buffer();
  return out;
}

Tensor concat_rows(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw DimensionError("concat_rows: no inputs");
  const std::size_t N = parts[0].dim(1);
  std::size_t rows = 0;
  for (const auto& p : parts) {
    require_rank(p, 2, "concat_rows");
    require_same_dtype(p, parts[0], "concat_rows");
    if (p.dim(1) != N)
      throw DimensionError("concat_rows: width " + std::to_string(p.dim(1)) + " vs " +
                           std::to_string(N));
    rows += p.dim(0);
  }
  Tensor out = make_result({rows, N}, parts[0].dtype(), parts, [parts](Node& o) {
    dispatch(o.dtype(), [&](auto r) {
      using R = decltype(r);
      auto g = out_grad<R>(o);
      std::size_t off = 0;
      for (const auto& p : parts) {
        if (p.requires_grad()) {
          auto gp = grad_of<R>(p);
          for (std::size_t i = 0; i < gp.size(); ++i) gp[i] += g[off + i];
        }
        off += p.numel();
      }
    });
  });
  dispatch(out.dtype(), [&](auto r) {
    using R = decltype(r);
    auto y = out.data<R>();
    std::size_t off = 0;
    for (const auto& p : parts) {
      auto pv = p.data<R>();
      std::copy(pv.begin(), pv.end(), y.begin() + static_cast<std::ptrdiff_t>(off));
      off += pv.size();
    }
  });
  return out;
}

Tensor slice_rows(const Tensor& x, std::size_t start, std::size_t count) {
  require_rank(x, 2, "slice_rows");
  if (start + count > x.dim(0) || count == 0)
    throw DimensionError("slice_rows: rows [" + std::to_string(start) + ", " +
                         std::to_string(start + count) + ") of " + shape_str(x.shape()));
  const std::size_t N = x.dim(1);
  Tensor out = make_result({count, N}, x.dtype(), {x}, [x, start, N](Node& o) {
    dispatch(o.dtype(), [&](auto r) {
      using R = decltype(r);
      auto g = out_grad<R>(o);
      auto gx = grad_of<R>(x);
      for (std::size_t i = 0; i < g.size(); ++i) gx[start * N + i] += g[i];
    });
  });
  dispatch(x.dtype(), [&](auto r) {
    using R = decltype(r);
    auto xv = x.data<R>();
    auto y = out.data<R>();
    std::copy_n(xv.begin() + static_cast<std::ptrdiff_t>(start * N), y.size(), y.begin());
  });
  return out;
}

Tensor concat_cols(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw DimensionError("concat_cols: no inputs");
  const std::size_t M = parts[0].dim(0);
  std::size_t cols = 0;
  for (const auto& p : parts) {
    require_rank(p, 2, "concat_cols");
    require_same_dtype(p, parts[0], "concat_cols");
    if (p.dim(0) != M)
      throw DimensionError("concat_cols: row count " + std::to_string(p.dim(0)) + " vs " +
                           std::to_string(M));
    cols += p.dim(1);
  }
  Tensor out = make_result({M, cols}, parts[0].dtype(), parts, [parts, M, cols](Node& o) {
    dispatch(o.dtype(), [&](auto r) {
      using R = decltype(r);
      auto g = out_grad<R>(o);
      std::size_t off = 0;
      for (const auto& p : parts) {
        const std::size_t w = p.dim(1);
        if (p.requires_grad()) {
          auto gp = grad_of<R>(p);
          for (std::size_t i = 0; i < M; ++i)
            for (std::size_t j = 0; j < w; ++j) gp[i * w + j] += g[i * cols + off + j];
        }
        off += w;
      }
    });
  });
  dispatch(out.dtype(), [&](auto r) {
    using R = decltype(r);
    auto y = out.data<R>();
    std::size_t off = 0;
    for (const auto& p : parts) {
      const std::size_t w = p.dim(1);
      auto pv = p.data<R>();
      for (std::size_t i = 0; i < M; ++i)
        for (std::size_t j = 0; j < w; ++j) y[i * cols + off + j] = pv[i * w + j];
      off += w;
    }
  });
  return out;
}

Tensor slice_cols(const Tensor& x, std::size_t start, std::size_t count) {
  require_rank(x, 2, "slice_cols");
  if (start + count > x.dim(1) || count == 0)
    throw DimensionError("slice_cols: cols [" + std::to_string(start) + ", " +
                         std::to_string(start + count) + ") of " + shape_str(x.shape()));
  const std::size_t M = x.dim(0), N = x.dim(1);
  Tensor out = make_result({M, count}, x.dtype(), {x}, [x, start, count, M, N](Node& o) {
    dispatch(o.dtype(), [&](auto r) {
      using R = decltype(r);
      auto g = out_grad<R>(o);
      auto gx = grad_of<R>(x);
      for (std::size_t i = 0; i < M; ++i)
        for (std::size_t j = 0; j < count; ++j) gx[i * N + start + j] += g[i * count + j];
    });
  });
  dispatch(x.dtype(), [&](auto r) {
    using R = decltype(r);
    auto xv = x.data<R>();
    auto y = out.data<R>();
    for (std::size_t i = 0; i < M; ++i)
      for (std::size_t j = 0; j < count; ++j) y[i * count + j] = xv[i * N + start + j];
  });
  return out;
}

Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps) {
  if (eps <= 0) throw ContractError("layer_norm: eps must be positive");
  const std::size_t D = x.shape().back();
  if (gain.numel() != D || bias.numel() != D)
    throw DimensionError("layer_norm: feature width " + std::to_string(D) + " vs gain " +
                         shape_str(gain.shape()) + ", bias " + shape_str(bias.shape()));
  require_same_dtype(x, gain, "layer_norm");
  const std::size_t rows = x.numel() / D;
  auto xhat = std::make_shared<Buffer>(x.dtype(), x.numel());
  auto rstd = std::make_shared<std::vector<double>>(rows);
  Tensor out = make_result(x.shape(), x.dtype(), {x, gain, bias},
                           [x, gain, bias, xhat, rstd, rows, D](Node& o) {
    dispatch(o.dtype(), [&](auto r) {
      using R = decltype(r);
      auto g = out_grad<R>(o);
      auto xh = xhat->as<const R>();
      auto gv = gain.data<R>();
      if (gain.requires_grad() || bias.requires_grad()) {
        for (std::size_t i = 0; i < rows; ++i)
          for (std::size_t j = 0; j < D; ++j) {
            if (gain.requires_grad()) grad_of<R>(gain)[j] += g[i * D + j] * xh[i * D + j];
            if (bias.requires_grad()) grad_of<R>(bias)[j] += g[i * D + j];
          }
      }
      if (x.requires_grad()) {
        auto gx = grad_of<R>(x);
        for (std::size_t i = 0; i < rows; ++i) {
          R mean_d = 0, mean_dx = 0;
          for (std::size_t j = 0; j < D; ++j) {
            const R d = g[i * D + j] * gv[j];
            mean_d += d;
            mean_dx += d * xh[i * D + j];
          }
          mean_d /= static_cast<R>(D);
          mean_dx /= static_cast<R>(D);
          const R rs = static_cast<R>((*rstd)[i]);
          for (std::size_t j = 0; j < D; ++j) {
            const R d = g[i * D + j] * gv[j];
            gx[i * D + j] += rs * (d - mean_d - xh[i * D + j] * mean_dx);
          }
        }
      }
    });
  });
  dispatch(x.dtype(), [&](auto r) {
    using R = decltype(r);
    auto xv = x.data<R>();
    auto y = out.data<R>();
    auto xh = xhat->as<R>();
    auto gv = gain.data<R>();
    auto bv = bias.data<R>();
    for (std::size_t i = 0; i < rows; ++i) {
      R mean = 0;
      for (std::size_t j = 0; j < D; ++j) mean += xv[i * D + j];
      mean /= static_cast<R>(D);
      R var = 0;
      for (std::size_t j = 0; j < D; ++j) {
        const R c = xv[i * D + j] - mean;
        var += c * c;
      }
      var /= static_cast<R>(D);
      const R rs = R(1) / std::sqrt(var + static_cast<R>(eps));
      (*rstd)[i] = rs;
      for (std::size_t j = 0; j < D; ++j) {
        xh[i * D + j] = (xv[i * D + j] - mean) * rs;
        y[i * D + j] = gv[j] * xh[i * D + j] + bv[j];
      }
    }
  });
  return out;
}

Tensor batch_norm1d(const Tensor& x, const Tensor& gain, const Tensor& bias, RunningStats& stats,
                    NormMode mode, double eps) {
  if (x.rank() != 2 && x.rank() != 3)
    throw DimensionError("batch_norm1d: expected B×C×T or C×N, got " + shape_str(x.shape()));
  const std::size_t B = x.rank() == 3 ? x.dim(0) : 1;
  const std::size_t C = x.rank() == 3 ? x.dim(1) : x.dim(0);
  const std::size_t T = x.rank() == 3 ? x.dim(2) : x.dim(1);
  if (gain.numel() != C || bias.numel() != C || stats.mean.numel() != C || stats.var.numel() != C)
    throw DimensionError("batch_norm1d: channel count " + std::to_string(C) +
                         " does not match parameters");
  const std::size_t count = B * T;
  if (mode == NormMode::train && count < 2)
    throw DimensionError("batch_norm1d: train mode needs at least 2 values per channel, got " +
                         std::to_string(count));
  auto idx = [C, T](std::size_t b, std::size_t c, std::size_t t) { return (b * C + c) * T + t; };

  auto xhat = std::make_shared<Buffer>(x.dtype(), x.numel());
  auto rstd = std::make_shared<std::vector<double>>(C);
  const bool train = mode == NormMode::train;
  Tensor out = make_result(x.shape(), x.dtype(), {x, gain, bias},
                           [x, gain, bias, xhat, rstd, B, C, T, count, train, idx](Node& o) {
    dispatch(o.dtype(), [&](auto r) {
      using R = decltype(r);
      auto g = out_grad<R>(o);
      auto xh = xhat->as<const R>();
      auto gv = gain.data<R>();
      for (std::size_t c = 0; c < C; ++c) {
        R sum_d = 0, sum_dx = 0, sum_g = 0, sum_gx = 0;
        for (std::size_t b = 0; b < B; ++b)
          for (std::size_t t = 0; t < T; ++t) {
            const std::size_t k = idx(b, c, t);
            sum_g += g[k];
            sum_gx += g[k] * xh[k];
            sum_d += g[k] * gv[c];
            sum_dx += g[k] * gv[c] * xh[k];
          }
        if (gain.requires_grad()) grad_of<R>(gain)[c] += sum_gx;
        if (bias.requires_grad()) grad_of<R>(bias)[c] += sum_g;
        if (!x.requires_grad()) continue;
        auto gx = grad_of<R>(x);
        const R rs = static_cast<R>((*rstd)[c]);
        const R n = static_cast<R>(count);
        for (std::size_t b = 0; b < B; ++b)
          for (std::size_t t = 0; t < T; ++t) {
            const std::size_t k = idx(b, c, t);
            const R d = g[k] * gv[c];
            if (train)
              gx[k] += rs * (d - sum_d / n - xh[k] * sum_dx / n);
            else
              gx[k] += rs * d;
          }
      }
    });
  });
  dispatch(x.dtype(), [&](auto r) {
    using R = decltype(r);
    auto xv = x.data<R>();
    auto y = out.data<R>();
    auto xh = xhat->as<R>();
    auto gv = gain.data<R>();
    auto bv = bias.data<R>();
    for (std::size_t c = 0; c < C; ++c) {
      double mean, var;
      if (train) {
        double s = 0;
        for (std::size_t b = 0; b < B; ++b)
          for (std::size_t t = 0; t < T; ++t) s += xv[idx(b, c, t)];
        mean = s / static_cast<double>(count);
        double ss = 0;
        for (std::size_t b = 0; b < B; ++b)
          for (std::size_t t = 0; t < T; ++t) {
            const double d = xv[idx(b, c, t)] - mean;
            ss += d * d;
          }
        var = ss / static_cast<double>(count);
        const double m = stats.momentum;
        stats.mean.set(c, (1 - m) * stats.mean.at(c) + m * mean);
        stats.var.set(c, (1 - m) * stats.var.at(c) +
                             m * ss / static_cast<double>(count - 1));
      } else {
        mean = stats.mean.at(c);
        var = stats.var.at(c);
      }
      const double rs = 1.0 / std::sqrt(var + eps);
      (*rstd)[c] = rs;
      for (std::size_t b = 0; b < B; ++b)
        for (std::size_t t = 0; t < T; ++t) {
          const std::size_t k = idx(b, c, t);
          xh[k] = static_cast<R>((xv[k] - mean) * rs);
          y[k] = gv[c] * xh[k] + bv[c];
        }
    }
  });
  return out;
}

Tensor log_softmax(const Tensor& x, std::size_t axis) {
  if (axis >= x.rank())
    throw DimensionError("log_softmax: axis " + std::to_string(axis) + " out of range for " +
                         shape_str(x.shape()));
  std::size_t outer = 1, inner = 1;
  const std::size_t len = x.dim(axis);
  for (std::size_t i = 0; i < axis; ++i) outer *= x.dim(i);
  for (std::size_t i = axis + 1; i < x.rank(); ++i) inner *= x.dim(i);

  Tensor out = make_result(x.shape(), x.dtype(), {x}, [x, outer, inner, len](Node& o) {
    dispatch(o.dtype(), [&](auto r) {
      using R = decltype(r);
      auto g = out_grad<R>(o);
      auto y = o.value.as<const R>();
      auto gx = grad_of<R>(x);
      for (std::size_t a = 0; a < outer; ++a)
        for (std::size_t c = 0; c < inner; ++c) {
          const std::size_t base = a * len * inner + c;
          R gs = 0;
          for (std::size_t k = 0; k < len; ++k) gs += g[base + k * inner];
          for (std::size_t k = 0; k < len; ++k) {
            const std::size_t i = base + k * inner;
            gx[i] += g[i] - std::exp(y[i]) * gs;
          }
        }
    });
  });
  dispatch(x.dtype(), [&](auto r) {
    using R = decltype(r);
    auto xv = x.data<R>();
    auto y = out.data<R>();
    for (std::size_t a = 0; a < outer; ++a)
      for (std::size_t c = 0; c < inner; ++c) {
        const std::size_t base = a * len * inner + c;
        R mx = -std::numeric_limits<R>::infinity();
        for (std::size_t k = 0; k < len; ++k) mx = std::max(mx, xv[base + k * inner]);
        R s = 0;
        for (std::size_t k = 0; k < len; ++k) s += std::exp(xv[base + k * inner] - mx);
        const R lse = mx + std::log(s);
        for (std::size_t k = 0; k < len; ++k) y[base + k * inner] = xv[base + k * inner] - lse;
      }
  });
  return out;
}

Tensor conv1d(const Tensor& x, const Tensor& kernels, const Tensor& bias, std::size_t stride,
              std::size_t padding) {
  require_rank(x, 2, "conv1d");
  require_rank(kernels, 3, "conv1d");
  require_same_dtype(x, kernels, "conv1d");
  if (stride < 1) throw DimensionError("conv1d: stride must be >= 1");
  const std::size_t Ci = x.dim(0), T = x.dim(1);
  const std::size_t Co = kernels.dim(0), K = kernels.dim(2);
  if (kernels.dim(1) != Ci)
    throw DimensionError("conv1d: input channels " + std::to_string(Ci) + " vs kernels " +
                         shape_str(kernels.shape()));
  if (K > T + 2 * padding)
    throw DimensionError("conv1d: kernel width " + std::to_string(K) +
                         " exceeds padded input length " + std::to_string(T + 2 * padding));
  const bool has_bias = bias.defined();
  if (has_bias && bias.numel() != Co)
    throw DimensionError("conv1d: bias " + shape_str(bias.shape()) + " vs " +
                         std::to_string(Co) + " output channels");
  const std::size_t To = (T + 2 * padding - K) / stride + 1;
  const std::size_t rows = Ci * K;

  // cols[(c*K + k) × To] holds x[c, t*stride + k - padding].
  auto cols = std::make_shared<Buffer>(x.dtype(), rows * To);
  auto src = [=](std::size_t t, std::size_t k) -> std::ptrdiff_t {
    return static_cast<std::ptrdiff_t>(t * stride + k) - static_cast<std::ptrdiff_t>(padding);
  };
  std::vector<Tensor> inputs{x, kernels};
  if (has_bias) inputs.push_back(bias);
  Tensor out = make_result({Co, To}, x.dtype(), inputs,
                           [x, kernels, bias, has_bias, cols, Ci, T, Co, K, To, rows, src](Node& o) {
    dispatch(o.dtype(), [&](auto r) {
      using R = decltype(r);
      auto g = out_grad<R>(o);
      if (kernels.requires_grad())
        kernels::gemm_nt<R>(Co, rows, To, g.data(), cols->as<const R>().data(),
                            grad_of<R>(kernels).data());
      if (has_bias && bias.requires_grad()) {
        auto gb = grad_of<R>(bias);
        for (std::size_t c = 0; c < Co; ++c)
          for (std::size_t t = 0; t < To; ++t) gb[c] += g[c * To + t];
      }
      if (x.requires_grad()) {
        std::vector<R> dcols(rows * To, R(0));
        kernels::gemm_tn<R>(rows, To, Co, kernels.data<R>().data(), g.data(), dcols.data());
        auto gx = grad_of<R>(x);
        for (std::size_t c = 0; c < Ci; ++c)
          for (std::size_t k = 0; k < K; ++k)
            for (std::size_t t = 0; t < To; ++t) {
              const auto s = src(t, k);
              if (s >= 0 && s < static_cast<std::ptrdiff_t>(T))
                gx[c * T + static_cast<std::size_t>(s)] += dcols[(c * K + k) * To + t];
            }
      }
    });
  });
  dispatch(x.dtype(), [&](auto r) {
    using R = decltype(r);
    auto xv = x.data<R>();
    auto cv = cols->as<R>();
    for (std::size_t c = 0; c < Ci; ++c)
      for (std::size_t k = 0; k < K; ++k)
        for (std::size_t t = 0; t < To; ++t) {
          const auto s = src(t, k);
          if (s >= 0 && s < static_cast<std::ptrdiff_t>(T))
            cv[(c * K + k) * To + t] = xv[c * T + static_cast<std::size_t>(s)];
        }
    auto y = out.data<R>();
    if (has_bias) {
      auto bv = bias.data<R>();
      for (std::size_t c = 0; c < Co; ++c)
        for (std::size_t t = 0; t < To; ++t) y[c * To + t] = bv[c];
    }
    kernels::gemm_nn<R>(Co, To, rows, kernels.data<R>().data(), cv.data(), y.data());
  });
  return out;
}

Tensor conv2d(const Tensor& x, const Tensor& kernels, const Tensor& bias, std::size_t stride,
              std::size_t padding) {
  require_rank(x, 4, "conv2d");
  require_rank(kernels, 4, "conv2d");
  require_same_dtype(x, kernels, "conv2d");
  if (stride < 1) throw DimensionError("conv2d: stride must be >= 1");
  const std::size_t N = x.dim(0), H = x.dim(1), W = x.dim(2), Ci = x.dim(3);
  const std::size_t Co = kernels.dim(0), Kh = kernels.dim(1), Kw = kernels.dim(2);
  if (kernels.dim(3) != Ci)
    throw DimensionError("conv2d: input channels " + std::to_string(Ci) + " vs kernels " +
                         shape_str(kernels.shape()));
  if (Kh > H + 2 * padding || Kw > W + 2 * padding)
    throw DimensionError("conv2d: kernel " + std::to_string(Kh) + "x" + std::to_string(Kw) +
                         " larger than padded frame " + std::to_string(H + 2 * padding) + "x" +
                         std::to_string(W + 2 * padding));
  const bool has_bias = bias.defined();
  if (has_bias && bias.numel() != Co)
    throw DimensionError("conv2d: bias " + shape_str(bias.shape()) + " vs " +
                         std::to_string(Co) + " output channels");
  const std::size_t Ho = (H + 2 * padding - Kh) / stride + 1;
  const std::size_t Wo = (W + 2 * padding - Kw) / stride + 1;
  const std::size_t R_ = N * Ho * Wo;
  const std::size_t KK = Kh * Kw * Ci;

  // patches[(n,i,j) × (ky,kx,c)]; -1 marks padding.
  auto src = std::make_shared<std::vector<std::ptrdiff_t>>(R_ * KK, -1);
  for (std::size_t n = 0; n < N; ++n)
    for (std::size_t i = 0; i < Ho; ++i)
      for (std::size_t j = 0; j < Wo; ++j) {
        const std::size_t row = (n * Ho + i) * Wo + j;
        for (std::size_t ky = 0; ky < Kh; ++ky) {
          const auto yy = static_cast<std::ptrdiff_t>(i * stride + ky) -
                          static_cast<std::ptrdiff_t>(padding);
          if (yy < 0 || yy >= static_cast<std::ptrdiff_t>(H)) continue;
          for (std::size_t kx = 0; kx < Kw; ++kx) {
            const auto xx = static_cast<std::ptrdiff_t>(j * stride + kx) -
                            static_cast<std::ptrdiff_t>(padding);
            if (xx < 0 || xx >= static_cast<std::ptrdiff_t>(W)) continue;
            for (std::size_t c = 0; c < Ci; ++c)
              (*src)[row * KK + (ky * Kw + kx) * Ci + c] = static_cast<std::ptrdiff_t>(
                  ((n * H + static_cast<std::size_t>(yy)) * W + static_cast<std::size_t>(xx)) *
                      Ci +
                  c);
          }
        }
      }
  auto patches = std::make_shared<Buffer>(x.dtype(), R_ * KK);
  std::vector<Tensor> inputs{x, kernels};
  if (has_bias) inputs.push_back(bias);
  Tensor out = make_result({N, Ho, Wo, Co}, x.dtype(), inputs,
                           [x, kernels, bias, has_bias, src, patches, R_, KK, Co](Node& o) {
    dispatch(o.dtype(), [&](auto r) {
      using R = decltype(r);
      auto g = out_grad<R>(o);
      if (kernels.requires_grad())
        kernels::gemm_tn<R>(Co, KK, R_, g.data(), patches->as<const R>().data(),
                            grad_of<R>(kernels).data());
      if (has_bias && bias.requires_grad()) {
        auto gb = grad_of<R>(bias);
        for (std::size_t q = 0; q < R_; ++q)
          for (std::size_t c = 0; c < Co; ++c) gb[c] += g[q * Co + c];
      }
      if (x.requires_grad()) {
        std::vector<R> dp(R_ * KK, R(0));
        kernels::gemm_nn<R>(R_, KK, Co, g.data(), kernels.data<R>().data(), dp.data());
        auto gx = grad_of<R>(x);
        for (std::size_t q = 0; q < R_ * KK; ++q)
          if ((*src)[q] >= 0) gx[static_cast<std::size_t>((*src)[q])] += dp[q];
      }
    });
  });
  dispatch(x.dtype(), [&](auto r) {
    using R = decltype(r);
    auto xv = x.data<R>();
    auto pv = patches->as<R>();
    for (std::size_t q = 0; q < R_ * KK; ++q)
      if ((*src)[q] >= 0) pv[q] = xv[static_cast<std::size_t>((*src)[q])];
    auto y = out.data<R>();
    if (has_bias) {
      auto bv = bias.data<R>();
      for (std::size_t q = 0; q < R_; ++q)
        for (std::size_t c = 0; c < Co; ++c) y[q * Co + c] = bv[c];
    }
    kernels::gemm_nt<R>(R_, Co, KK, pv.data(), kernels.data<R>().data(), y.data());
  });
  return out;
}

Tensor embedding(const Tensor& table, std::span<const int> ids) {
  require_rank(table, 2, "embedding");
  if (ids.empty()) throw DimensionError("embedding: empty id list");
  const std::size_t V = table.dim(0), D = table.dim(1);
  for (int id : ids)
    if (id < 0 || static_cast<std::size_t>(id) >= V)
      throw DimensionError("embedding: id " + std::to_string(id) + " outside table of " +
                           std::to_string(V) + " rows");
  std::vector<int> idv(ids.begin(), ids.end());
  Tensor out = make_result({idv.size(), D}, table.dtype(), {table}, [table, idv, D](Node& o) {
    dispatch(o.dtype(), [&](auto r) {
      using R = decltype(r);
      auto g = out_grad<R>(o);
      auto gt = grad_of<R>(table);
      for (std::size_t i = 0; i < idv.size(); ++i)
        for (std::size_t j = 0; j < D; ++j)
          gt[static_cast<std::size_t>(idv[i]) * D + j] += g[i * D + j];
    });
  });
  dispatch(table.dtype(), [&](auto r) {
    using R = decltype(r);
    auto tv = table.data<R>();
    auto y = out.data<R>();
    for (std::size_t i = 0; i < idv.size(); ++i)
      std::copy_n(tv.begin() + static_cast<std::ptrdiff_t>(static_cast<std::size_t>(idv[i]) * D),
                  D, y.begin() + static_cast<std::ptrdiff_t>(i * D));
  });
  return out;
}

Tensor nll_loss(const Tensor& log_probs, std::span<const int> targets) {
  require_rank(log_probs, 2, "nll_loss");
  const std::size_t N = log_probs.dim(0), V = log_probs.dim(1);
  if (targets.size() != N)
    throw DimensionError("nll_loss: " + std::to_string(N) + " rows but " +
                         std::to_string(targets.size()) + " targets");
  for (int t : targets)
    if (t < 0 || static_cast<std::size_t>(t) >= V)
      throw DimensionError("nll_loss: target " + std::to_string(t) + " outside [0, " +
                           std::to_string(V) + ")");
  std::vector<int> tv(targets.begin(), targets.end());
  Tensor out = make_result({1}, log_probs.dtype(), {log_probs}, [log_probs, tv, V](Node& o) {
    dispatch(o.dtype(), [&](auto r) {
      using R = decltype(r);
      const R g = out_grad<R>(o)[0];
      auto gl = grad_of<R>(log_probs);
      for (std::size_t i = 0; i < tv.size(); ++i) gl[i * V + static_cast<std::size_t>(tv[i])] -= g;
    });
  });
  dispatch(log_probs.dtype(), [&](auto r) {
    using R = decltype(r);
    auto lp = log_probs.data<R>();
    R s = 0;
    for (std::size_t i = 0; i < tv.size(); ++i) s -= lp[i * V + static_cast<std::size_t>(tv[i])];
    out.data<R>()[0] = s;
  });
  return out;
}

Tensor multi_head_attention(const Tensor& q, const Tensor& k, const Tensor& v, std::size_t heads,
                            bool causal) {
  require_rank(q, 2, "attention");
  require_rank(k, 2, "attention");
  require_rank(v, 2, "attention");
  require_same_dtype(q, k, "attention");
  require_same_dtype(q, v, "attention");
  const std::size_t Tq = q.dim(0), Tk = k.dim(0), D = q.dim(1);
  if (k.dim(1) != D || v.dim(1) != D || v.dim(0) != Tk)
    throw DimensionError("attention: q " + shape_str(q.shape()) + ", k " + shape_str(k.shape()) +
                         ", v " + shape_str(v.shape()));
  if (heads == 0 || D % heads != 0)
    throw DimensionError("attention: width " + std::to_string(D) + " not divisible into " +
                         std::to_string(heads) + " heads");
  if (causal && Tq != Tk)
    throw DimensionError("attention: causal mask needs equal query and key lengths");
  const std::size_t dh = D / heads;
  const double scale_f = 1.0 / std::sqrt(static_cast<double>(dh));

  // probs[h][i][j]
  auto probs = std::make_shared<Buffer>(q.dtype(), heads * Tq * Tk);
  Tensor out = make_result({Tq, D}, q.dtype(), {q, k, v},
                           [q, k, v, heads, probs, Tq, Tk, D, dh, scale_f](Node& o) {
    dispatch(o.dtype(), [&](auto r) {
      using R = decltype(r);
      auto g = out_grad<R>(o);
      auto P = probs->as<const R>();
      auto qv = q.data<R>();
      auto kv = k.data<R>();
      auto vv = v.data<R>();
      std::span<R> gq, gk, gv;
      if (q.requires_grad()) gq = grad_of<R>(q);
      if (k.requires_grad()) gk = grad_of<R>(k);
      if (v.requires_grad()) gv = grad_of<R>(v);
      std::vector<R> dP(Tk);
      for (std::size_t h = 0; h < heads; ++h) {
        const std::size_t off = h * dh;
        for (std::size_t i = 0; i < Tq; ++i) {
          const R* p = P.data() + (h * Tq + i) * Tk;
          const R* gi = g.data() + i * D + off;
          R dot = 0;
          for (std::size_t j = 0; j < Tk; ++j) {
            R s = 0;
            const R* vj = vv.data() + j * D + off;
            for (std::size_t c = 0; c < dh; ++c) s += gi[c] * vj[c];
            dP[j] = s;
            dot += s * p[j];
            if (!gv.empty() && p[j] != R(0)) {
              R* gvj = gv.data() + j * D + off;
              for (std::size_t c = 0; c < dh; ++c) gvj[c] += p[j] * gi[c];
            }
          }
          for (std::size_t j = 0; j < Tk; ++j) {
            const R dS = p[j] * (dP[j] - dot) * static_cast<R>(scale_f);
            if (dS == R(0)) continue;
            if (!gq.empty()) {
              R* gqi = gq.data() + i * D + off;
              const R* kj = kv.data() + j * D + off;
              for (std::size_t c = 0; c < dh; ++c) gqi[c] += dS * kj[c];
            }
            if (!gk.empty()) {
              R* gkj = gk.data() + j * D + off;
              const R* qi = qv.data() + i * D + off;
              for (std::size_t c = 0; c < dh; ++c) gkj[c] += dS * qi[c];
            }
          }
        }
      }
    });
  });
  dispatch(q.dtype(), [&](auto r) {
    using R = decltype(r);
    auto qv = q.data<R>();
    auto kv = k.data<R>();
    auto vv = v.data<R>();
    auto P = probs->as<R>();
    auto y = out.data<R>();
    for (std::size_t h = 0; h < heads; ++h) {
      const std::size_t off = h * dh;
      for (std::size_t i = 0; i < Tq; ++i) {
        R* p = P.data() + (h * Tq + i) * Tk;
        const std::size_t visible = causal ? i + 1 : Tk;
        R mx = -std::numeric_limits<R>::infinity();
        for (std::size_t j = 0; j < visible; ++j) {
          R s = 0;
          for (std::size_t c = 0; c < dh; ++c) s += qv[i * D + off + c] * kv[j * D + off + c];
          p[j] = s * static_cast<R>(scale_f);
          mx = std::max(mx, p[j]);
        }
        R z = 0;
        for (std::size_t j = 0; j < visible; ++j) {
          p[j] = std::exp(p[j] - mx);
          z += p[j];
        }
        for (std::size_t j = 0; j < visible; ++j) p[j] /= z;
        for (std::size_t j = visible; j < Tk; ++j) p[j] = 0;
        R* yi = y.data() + i * D + off;
        for (std::size_t j = 0; j < visible; ++j) {
          const R* vj = vv.data() + j * D + off;
          for (std::size_t c = 0; c < dh; ++c) yi[c] += p[j] * vj[c];
        }
      }
    }
  });
  return out;
}

}  // namespace polyavsr
