#pragma once

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <cstring>
#include <vector>

#include "mcafu/complexity.hpp"
#include "mcafu/var.hpp"

namespace mcafu::ops {

template <typename T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MatMap = Eigen::Map<RowMat<T>>;
template <typename T>
using CMatMap = Eigen::Map<const RowMat<T>>;

// ---------------------------------------------------------------------------
// elementwise
// ---------------------------------------------------------------------------

template <typename T, typename FwdFn, typename BwdFn>
Var<T> unary_op(const Var<T>& x, FwdFn f, BwdFn dfdx_from_xy) {
  const Tensor<T>& xv = x.val();
  Tensor<T> y{xv.shape()};
  const T* xp = xv.data();
  T* yp = y.data();
  for (int64_t i = 0; i < xv.numel(); ++i) yp[i] = f(xp[i]);
  Tensor<T> yc = y;
  return make_op<T>(std::move(y), {x},
                    [xn = x.node(), yc, dfdx_from_xy](VarNode<T>& n) {
                      const T* g = n.grad.data();
                      const T* xp2 = xn->value.data();
                      const T* yp2 = yc.data();
                      T* d = xn->ensure_grad().data();
                      for (int64_t i = 0; i < n.grad.numel(); ++i)
                        d[i] += g[i] * dfdx_from_xy(xp2[i], yp2[i]);
                    });
}

template <typename T>
Var<T> relu(const Var<T>& x) {
  return unary_op(x, [](T v) { return v > 0 ? v : T(0); },
                  [](T v, T) { return v > 0 ? T(1) : T(0); });
}

template <typename T>
Var<T> sigmoid(const Var<T>& x) {
  return unary_op(x, [](T v) { return T(1) / (T(1) + std::exp(-v)); },
                  [](T, T y) { return y * (T(1) - y); });
}

template <typename T>
Var<T> softplus(const Var<T>& x) {
  return unary_op(x,
                  [](T v) {
                    // stable: max(v,0) + log1p(exp(-|v|))
                    return std::max(v, T(0)) + std::log1p(std::exp(-std::abs(v)));
                  },
                  [](T v, T) { return T(1) / (T(1) + std::exp(-v)); });
}

template <typename T>
Var<T> gelu(const Var<T>& x) {
  constexpr double kInvSqrt2 = 0.7071067811865475244;
  constexpr double kInvSqrt2Pi = 0.3989422804014326779;
  return unary_op(x,
                  [=](T v) { return T(0.5) * v * (T(1) + T(std::erf(double(v) * kInvSqrt2))); },
                  [=](T v, T) {
                    double cdf = 0.5 * (1.0 + std::erf(double(v) * kInvSqrt2));
                    double pdf = kInvSqrt2Pi * std::exp(-0.5 * double(v) * double(v));
                    return T(cdf + double(v) * pdf);
                  });
}

template <typename T>
Var<T> exp_(const Var<T>& x) {
  return unary_op(x, [](T v) { return std::exp(v); }, [](T, T y) { return y; });
}

template <typename T>
Var<T> neg(const Var<T>& x) {
  return unary_op(x, [](T v) { return -v; }, [](T, T) { return T(-1); });
}

template <typename T>
Var<T> scale(const Var<T>& x, double s) {
  return unary_op(x, [s](T v) { return T(v * s); }, [s](T, T) { return T(s); });
}

template <typename T>
Var<T> add(const Var<T>& a, const Var<T>& b) {
  if (a.shape() != b.shape()) throw ShapeError("add: " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  Tensor<T> y{a.shape()};
  const T* ap = a.val().data();
  const T* bp = b.val().data();
  T* yp = y.data();
  for (int64_t i = 0; i < y.numel(); ++i) yp[i] = ap[i] + bp[i];
  return make_op<T>(std::move(y), {a, b}, [an = a.node(), bn = b.node()](VarNode<T>& n) {
    const T* g = n.grad.data();
    int64_t m = n.grad.numel();
    if (an->requires_grad) {
      T* d = an->ensure_grad().data();
      for (int64_t i = 0; i < m; ++i) d[i] += g[i];
    }
    if (bn->requires_grad) {
      T* d = bn->ensure_grad().data();
      for (int64_t i = 0; i < m; ++i) d[i] += g[i];
    }
  });
}

template <typename T>
Var<T> sub(const Var<T>& a, const Var<T>& b) {
  return add(a, neg(b));
}

template <typename T>
Var<T> mul(const Var<T>& a, const Var<T>& b) {
  if (a.shape() != b.shape()) throw ShapeError("mul: shape mismatch");
  Tensor<T> y{a.shape()};
  const T* ap = a.val().data();
  const T* bp = b.val().data();
  T* yp = y.data();
  for (int64_t i = 0; i < y.numel(); ++i) yp[i] = ap[i] * bp[i];
  return make_op<T>(std::move(y), {a, b}, [an = a.node(), bn = b.node()](VarNode<T>& n) {
    const T* g = n.grad.data();
    int64_t m = n.grad.numel();
    if (an->requires_grad) {
      T* d = an->ensure_grad().data();
      const T* o = bn->value.data();
      for (int64_t i = 0; i < m; ++i) d[i] += g[i] * o[i];
    }
    if (bn->requires_grad) {
      T* d = bn->ensure_grad().data();
      const T* o = an->value.data();
      for (int64_t i = 0; i < m; ++i) d[i] += g[i] * o[i];
    }
  });
}

/// x (N,C,H,W) * gate (N,1,H,W), broadcast over channels.
template <typename T>
Var<T> mul_gate_hw(const Var<T>& x, const Var<T>& gate) {
  check_rank4(x.shape(), "mul_gate_hw");
  const auto& xs = x.shape();
  const auto& gs = gate.shape();
  if (gs.size() != 4 || gs[0] != xs[0] || gs[1] != 1 || gs[2] != xs[2] || gs[3] != xs[3])
    throw ShapeError("mul_gate_hw: gate must be (N,1,H,W) matching x");
  int64_t N = xs[0], C = xs[1], HW = xs[2] * xs[3];
  Tensor<T> y{xs};
  {
    const T* xp = x.val().data();
    const T* gp = gate.val().data();
    T* yp = y.data();
    for (int64_t n = 0; n < N; ++n)
      for (int64_t c = 0; c < C; ++c) {
        const T* xrow = xp + (n * C + c) * HW;
        const T* grow = gp + n * HW;
        T* yrow = yp + (n * C + c) * HW;
        for (int64_t i = 0; i < HW; ++i) yrow[i] = xrow[i] * grow[i];
      }
  }
  return make_op<T>(std::move(y), {x, gate},
                    [xn = x.node(), gn = gate.node(), N, C, HW](VarNode<T>& n) {
                      const T* g = n.grad.data();
                      if (xn->requires_grad) {
                        T* d = xn->ensure_grad().data();
                        const T* gp = gn->value.data();
                        for (int64_t b = 0; b < N; ++b)
                          for (int64_t c = 0; c < C; ++c) {
                            const T* grow = g + (b * C + c) * HW;
                            const T* arow = gp + b * HW;
                            T* drow = d + (b * C + c) * HW;
                            for (int64_t i = 0; i < HW; ++i) drow[i] += grow[i] * arow[i];
                          }
                      }
                      if (gn->requires_grad) {
                        T* d = gn->ensure_grad().data();
                        const T* xp = xn->value.data();
                        for (int64_t b = 0; b < N; ++b)
                          for (int64_t c = 0; c < C; ++c) {
                            const T* grow = g + (b * C + c) * HW;
                            const T* xrow = xp + (b * C + c) * HW;
                            T* drow = d + b * HW;
                            for (int64_t i = 0; i < HW; ++i) drow[i] += grow[i] * xrow[i];
                          }
                      }
                    });
}

/// x (N,C,H,W) * s (N,C), broadcast over spatial positions.
template <typename T>
Var<T> mul_gate_c(const Var<T>& x, const Var<T>& s) {
  check_rank4(x.shape(), "mul_gate_c");
  const auto& xs = x.shape();
  if (s.shape() != Shape{xs[0], xs[1]}) throw ShapeError("mul_gate_c: scale must be (N,C)");
  int64_t N = xs[0], C = xs[1], HW = xs[2] * xs[3];
  Tensor<T> y{xs};
  {
    const T* xp = x.val().data();
    const T* sp = s.val().data();
    T* yp = y.data();
    for (int64_t nc = 0; nc < N * C; ++nc) {
      T f = sp[nc];
      const T* xrow = xp + nc * HW;
      T* yrow = yp + nc * HW;
      for (int64_t i = 0; i < HW; ++i) yrow[i] = xrow[i] * f;
    }
  }
  return make_op<T>(std::move(y), {x, s}, [xn = x.node(), sn = s.node(), N, C, HW](VarNode<T>& n) {
    const T* g = n.grad.data();
    if (xn->requires_grad) {
      T* d = xn->ensure_grad().data();
      const T* sp = sn->value.data();
      for (int64_t nc = 0; nc < N * C; ++nc) {
        T f = sp[nc];
        const T* grow = g + nc * HW;
        T* drow = d + nc * HW;
        for (int64_t i = 0; i < HW; ++i) drow[i] += grow[i] * f;
      }
    }
    if (sn->requires_grad) {
      T* d = sn->ensure_grad().data();
      const T* xp = xn->value.data();
      for (int64_t nc = 0; nc < N * C; ++nc) {
        const T* grow = g + nc * HW;
        const T* xrow = xp + nc * HW;
        T acc = 0;
        for (int64_t i = 0; i < HW; ++i) acc += grow[i] * xrow[i];
        d[nc] += acc;
      }
    }
  });
}

// ---------------------------------------------------------------------------
// shape ops
// ---------------------------------------------------------------------------

template <typename T>
Var<T> reshape(const Var<T>& x, Shape s) {
  Tensor<T> y = x.val().reshaped(s).clone();
  return make_op<T>(std::move(y), {x}, [xn = x.node()](VarNode<T>& n) {
    T* d = xn->ensure_grad().data();
    const T* g = n.grad.data();
    for (int64_t i = 0; i < n.grad.numel(); ++i) d[i] += g[i];
  });
}

/// (B,C,H,W) -> (B,H*W,C)
template <typename T>
Var<T> nchw_to_nlc(const Var<T>& x) {
  check_rank4(x.shape(), "nchw_to_nlc");
  int64_t B = x.shape()[0], C = x.shape()[1], HW = x.shape()[2] * x.shape()[3];
  Tensor<T> y{{B, HW, C}};
  const T* xp = x.val().data();
  T* yp = y.data();
  for (int64_t b = 0; b < B; ++b)
    for (int64_t c = 0; c < C; ++c) {
      const T* xrow = xp + (b * C + c) * HW;
      T* ybase = yp + b * HW * C + c;
      for (int64_t i = 0; i < HW; ++i) ybase[i * C] = xrow[i];
    }
  return make_op<T>(std::move(y), {x}, [xn = x.node(), B, C, HW](VarNode<T>& n) {
    T* d = xn->ensure_grad().data();
    const T* g = n.grad.data();
    for (int64_t b = 0; b < B; ++b)
      for (int64_t c = 0; c < C; ++c) {
        T* drow = d + (b * C + c) * HW;
        const T* gbase = g + b * HW * C + c;
        for (int64_t i = 0; i < HW; ++i) drow[i] += gbase[i * C];
      }
  });
}

/// (B,H*W,C) -> (B,C,H,W)
template <typename T>
Var<T> nlc_to_nchw(const Var<T>& x, int64_t H, int64_t W) {
  if (x.shape().size() != 3 || x.shape()[1] != H * W)
    throw ShapeError("nlc_to_nchw: expected (B," + std::to_string(H * W) + ",C)");
  int64_t B = x.shape()[0], C = x.shape()[2], HW = H * W;
  Tensor<T> y{{B, C, H, W}};
  const T* xp = x.val().data();
  T* yp = y.data();
  for (int64_t b = 0; b < B; ++b)
    for (int64_t c = 0; c < C; ++c) {
      const T* xbase = xp + b * HW * C + c;
      T* yrow = yp + (b * C + c) * HW;
      for (int64_t i = 0; i < HW; ++i) yrow[i] = xbase[i * C];
    }
  return make_op<T>(std::move(y), {x}, [xn = x.node(), B, C, HW](VarNode<T>& n) {
    T* d = xn->ensure_grad().data();
    const T* g = n.grad.data();
    for (int64_t b = 0; b < B; ++b)
      for (int64_t c = 0; c < C; ++c) {
        T* dbase = d + b * HW * C + c;
        const T* grow = g + (b * C + c) * HW;
        for (int64_t i = 0; i < HW; ++i) dbase[i * C] += grow[i];
      }
  });
}

/// (B,L,C) -> (B,h,L,C/h)
template <typename T>
Var<T> split_heads(const Var<T>& x, int64_t heads) {
  int64_t B = x.shape()[0], L = x.shape()[1], C = x.shape()[2];
  if (C % heads != 0) throw ShapeError("split_heads: channels not divisible by head count");
  int64_t D = C / heads;
  Tensor<T> y{{B, heads, L, D}};
  const T* xp = x.val().data();
  T* yp = y.data();
  for (int64_t b = 0; b < B; ++b)
    for (int64_t h = 0; h < heads; ++h)
      for (int64_t l = 0; l < L; ++l)
        std::memcpy(yp + ((b * heads + h) * L + l) * D, xp + (b * L + l) * C + h * D,
                    sizeof(T) * D);
  return make_op<T>(std::move(y), {x}, [xn = x.node(), B, heads, L, D, C](VarNode<T>& n) {
    T* d = xn->ensure_grad().data();
    const T* g = n.grad.data();
    for (int64_t b = 0; b < B; ++b)
      for (int64_t h = 0; h < heads; ++h)
        for (int64_t l = 0; l < L; ++l) {
          const T* grow = g + ((b * heads + h) * L + l) * D;
          T* drow = d + (b * L + l) * C + h * D;
          for (int64_t k = 0; k < D; ++k) drow[k] += grow[k];
        }
  });
}

/// (B,h,L,D) -> (B,L,h*D)
template <typename T>
Var<T> merge_heads(const Var<T>& x) {
  int64_t B = x.shape()[0], heads = x.shape()[1], L = x.shape()[2], D = x.shape()[3];
  int64_t C = heads * D;
  Tensor<T> y{{B, L, C}};
  const T* xp = x.val().data();
  T* yp = y.data();
  for (int64_t b = 0; b < B; ++b)
    for (int64_t h = 0; h < heads; ++h)
      for (int64_t l = 0; l < L; ++l)
        std::memcpy(yp + (b * L + l) * C + h * D, xp + ((b * heads + h) * L + l) * D,
                    sizeof(T) * D);
  return make_op<T>(std::move(y), {x}, [xn = x.node(), B, heads, L, D, C](VarNode<T>& n) {
    T* d = xn->ensure_grad().data();
    const T* g = n.grad.data();
    for (int64_t b = 0; b < B; ++b)
      for (int64_t h = 0; h < heads; ++h)
        for (int64_t l = 0; l < L; ++l) {
          const T* grow = g + (b * L + l) * C + h * D;
          T* drow = d + ((b * heads + h) * L + l) * D;
          for (int64_t k = 0; k < D; ++k) drow[k] += grow[k];
        }
  });
}

template <typename T>
Var<T> concat_channels(const std::vector<Var<T>>& xs) {
  if (xs.empty()) throw ShapeError("concat_channels: empty input list");
  const auto& s0 = xs[0].shape();
  check_rank4(s0, "concat_channels");
  int64_t N = s0[0], H = s0[2], W = s0[3], HW = H * W;
  int64_t Ctot = 0;
  for (const auto& x : xs) {
    const auto& s = x.shape();
    if (s.size() != 4 || s[0] != N || s[2] != H || s[3] != W)
      throw ShapeError("concat_channels: spatial/batch mismatch");
    Ctot += s[1];
  }
  Tensor<T> y{{N, Ctot, H, W}};
  T* yp = y.data();
  int64_t coff = 0;
  for (const auto& x : xs) {
    int64_t C = x.shape()[1];
    const T* xp = x.val().data();
    for (int64_t n = 0; n < N; ++n)
      std::memcpy(yp + (n * Ctot + coff) * HW, xp + n * C * HW, sizeof(T) * C * HW);
    coff += C;
  }
  std::vector<std::shared_ptr<VarNode<T>>> nodes;
  std::vector<int64_t> chans;
  for (const auto& x : xs) {
    nodes.push_back(x.node());
    chans.push_back(x.shape()[1]);
  }
  return make_op<T>(std::move(y), xs, [nodes, chans, N, HW, Ctot](VarNode<T>& n) {
    const T* g = n.grad.data();
    int64_t coff2 = 0;
    for (size_t i = 0; i < nodes.size(); ++i) {
      int64_t C = chans[i];
      if (nodes[i]->requires_grad) {
        T* d = nodes[i]->ensure_grad().data();
        for (int64_t b = 0; b < N; ++b) {
          const T* grow = g + (b * Ctot + coff2) * HW;
          T* drow = d + b * C * HW;
          for (int64_t k = 0; k < C * HW; ++k) drow[k] += grow[k];
        }
      }
      coff2 += C;
    }
  });
}

// ---------------------------------------------------------------------------
// reductions
// ---------------------------------------------------------------------------

template <typename T>
Var<T> mean_all(const Var<T>& x) {
  int64_t m = x.numel();
  T acc = 0;
  const T* xp = x.val().data();
  for (int64_t i = 0; i < m; ++i) acc += xp[i];
  Tensor<T> y = Tensor<T>::scalar(acc / T(m));
  return make_op<T>(std::move(y), {x}, [xn = x.node(), m](VarNode<T>& n) {
    T g = n.grad[0] / T(m);
    T* d = xn->ensure_grad().data();
    for (int64_t i = 0; i < m; ++i) d[i] += g;
  });
}

template <typename T>
Var<T> global_avg_pool(const Var<T>& x) {
  check_rank4(x.shape(), "global_avg_pool");
  int64_t N = x.shape()[0], C = x.shape()[1], HW = x.shape()[2] * x.shape()[3];
  Tensor<T> y{{N, C}};
  const T* xp = x.val().data();
  T* yp = y.data();
  for (int64_t nc = 0; nc < N * C; ++nc) {
    T acc = 0;
    const T* row = xp + nc * HW;
    for (int64_t i = 0; i < HW; ++i) acc += row[i];
    yp[nc] = acc / T(HW);
  }
  return make_op<T>(std::move(y), {x}, [xn = x.node(), N, C, HW](VarNode<T>& n) {
    const T* g = n.grad.data();
    T* d = xn->ensure_grad().data();
    for (int64_t nc = 0; nc < N * C; ++nc) {
      T gg = g[nc] / T(HW);
      T* drow = d + nc * HW;
      for (int64_t i = 0; i < HW; ++i) drow[i] += gg;
    }
  });
}

/// Per-pixel channel max -> (N,1,H,W); ties resolved to the lowest index.
template <typename T>
Var<T> channel_max(const Var<T>& x) {
  check_rank4(x.shape(), "channel_max");
  int64_t N = x.shape()[0], C = x.shape()[1], HW = x.shape()[2] * x.shape()[3];
  Tensor<T> y{{N, 1, x.shape()[2], x.shape()[3]}};
  auto arg = std::make_shared<std::vector<int32_t>>(N * HW);
  const T* xp = x.val().data();
  T* yp = y.data();
  for (int64_t n = 0; n < N; ++n)
    for (int64_t i = 0; i < HW; ++i) {
      T best = xp[(n * C) * HW + i];
      int32_t bi = 0;
      for (int64_t c = 1; c < C; ++c) {
        T v = xp[(n * C + c) * HW + i];
        if (v > best) { best = v; bi = static_cast<int32_t>(c); }
      }
      yp[n * HW + i] = best;
      (*arg)[n * HW + i] = bi;
    }
  return make_op<T>(std::move(y), {x}, [xn = x.node(), arg, N, C, HW](VarNode<T>& n) {
    const T* g = n.grad.data();
    T* d = xn->ensure_grad().data();
    for (int64_t b = 0; b < N; ++b)
      for (int64_t i = 0; i < HW; ++i)
        d[(b * C + (*arg)[b * HW + i]) * HW + i] += g[b * HW + i];
  });
}

template <typename T>
Var<T> channel_mean(const Var<T>& x) {
  check_rank4(x.shape(), "channel_mean");
  int64_t N = x.shape()[0], C = x.shape()[1], HW = x.shape()[2] * x.shape()[3];
  Tensor<T> y{{N, 1, x.shape()[2], x.shape()[3]}};
  const T* xp = x.val().data();
  T* yp = y.data();
  for (int64_t n = 0; n < N; ++n)
    for (int64_t i = 0; i < HW; ++i) {
      T acc = 0;
      for (int64_t c = 0; c < C; ++c) acc += xp[(n * C + c) * HW + i];
      yp[n * HW + i] = acc / T(C);
    }
  return make_op<T>(std::move(y), {x}, [xn = x.node(), N, C, HW](VarNode<T>& n) {
    const T* g = n.grad.data();
    T* d = xn->ensure_grad().data();
    for (int64_t b = 0; b < N; ++b)
      for (int64_t i = 0; i < HW; ++i) {
        T gg = g[b * HW + i] / T(C);
        for (int64_t c = 0; c < C; ++c) d[(b * C + c) * HW + i] += gg;
      }
  });
}

// ---------------------------------------------------------------------------
// linear algebra
// ---------------------------------------------------------------------------

/// x (..., in) @ W^T (out, in) + b.
template <typename T>
Var<T> linear(const Var<T>& x, const Var<T>& w, const Var<T>& b = Var<T>()) {
  int64_t in = x.shape().back();
  if (w.shape().size() != 2 || w.shape()[1] != in)
    throw ShapeError("linear: weight " + shape_str(w.shape()) + " vs input " + shape_str(x.shape()));
  int64_t out = w.shape()[0];
  int64_t rows = x.numel() / in;
  Shape ys = x.shape();
  ys.back() = out;
  Tensor<T> y{ys};
  {
    CMatMap<T> X(x.val().data(), rows, in);
    CMatMap<T> W(w.val().data(), out, in);
    MatMap<T> Y(y.data(), rows, out);
    Y.noalias() = X * W.transpose();
    if (b.defined()) {
      const T* bp = b.val().data();
      T* yp = y.data();
      for (int64_t r = 0; r < rows; ++r)
        for (int64_t c = 0; c < out; ++c) yp[r * out + c] += bp[c];
    }
  }
  complexity::add_macs("linear", rows * in * out);
  std::vector<Var<T>> parents = b.defined() ? std::vector<Var<T>>{x, w, b} : std::vector<Var<T>>{x, w};
  return make_op<T>(std::move(y), parents,
                    [xn = x.node(), wn = w.node(), bn = b.defined() ? b.node() : nullptr, rows, in,
                     out](VarNode<T>& n) {
                      CMatMap<T> G(n.grad.data(), rows, out);
                      if (xn->requires_grad) {
                        MatMap<T> DX(xn->ensure_grad().data(), rows, in);
                        CMatMap<T> W(wn->value.data(), out, in);
                        DX.noalias() += G * W;
                      }
                      if (wn->requires_grad) {
                        MatMap<T> DW(wn->ensure_grad().data(), out, in);
                        CMatMap<T> X(xn->value.data(), rows, in);
                        DW.noalias() += G.transpose() * X;
                      }
                      if (bn && bn->requires_grad) {
                        T* db = bn->ensure_grad().data();
                        const T* g = n.grad.data();
                        for (int64_t r = 0; r < rows; ++r)
                          for (int64_t c = 0; c < out; ++c) db[c] += g[r * out + c];
                      }
                    });
}

/// Batched matmul on (B,H,M,K) x (B,H,K,N); trans_b swaps the last two dims of b.
template <typename T>
Var<T> matmul_bh(const Var<T>& a, const Var<T>& b, bool trans_b = false) {
  const auto& as = a.shape();
  const auto& bs = b.shape();
  if (as.size() != 4 || bs.size() != 4 || as[0] != bs[0] || as[1] != bs[1])
    throw ShapeError("matmul_bh: expected matching (B,H,..) batches");
  int64_t B = as[0], H = as[1], M = as[2], K = as[3];
  int64_t bK = trans_b ? bs[3] : bs[2];
  int64_t N = trans_b ? bs[2] : bs[3];
  if (bK != K) throw ShapeError("matmul_bh: inner dimension mismatch");
  Tensor<T> y{{B, H, M, N}};
  for (int64_t i = 0; i < B * H; ++i) {
    CMatMap<T> A(a.val().data() + i * M * K, M, K);
    MatMap<T> Y(y.data() + i * M * N, M, N);
    if (trans_b) {
      CMatMap<T> Bm(b.val().data() + i * N * K, N, K);
      Y.noalias() = A * Bm.transpose();
    } else {
      CMatMap<T> Bm(b.val().data() + i * K * N, K, N);
      Y.noalias() = A * Bm;
    }
  }
  complexity::add_macs("matmul", B * H * M * K * N);
  return make_op<T>(std::move(y), {a, b},
                    [an = a.node(), bn = b.node(), B, H, M, K, N, trans_b](VarNode<T>& n) {
                      for (int64_t i = 0; i < B * H; ++i) {
                        CMatMap<T> G(n.grad.data() + i * M * N, M, N);
                        if (an->requires_grad) {
                          MatMap<T> DA(an->ensure_grad().data() + i * M * K, M, K);
                          if (trans_b) {
                            CMatMap<T> Bm(bn->value.data() + i * N * K, N, K);
                            DA.noalias() += G * Bm;
                          } else {
                            CMatMap<T> Bm(bn->value.data() + i * K * N, K, N);
                            DA.noalias() += G * Bm.transpose();
                          }
                        }
                        if (bn->requires_grad) {
                          CMatMap<T> A(an->value.data() + i * M * K, M, K);
                          if (trans_b) {
                            MatMap<T> DB(bn->ensure_grad().data() + i * N * K, N, K);
                            DB.noalias() += G.transpose() * A;
                          } else {
                            MatMap<T> DB(bn->ensure_grad().data() + i * K * N, K, N);
                            DB.noalias() += A.transpose() * G;
                          }
                        }
                      }
                    });
}

template <typename T>
Var<T> softmax_lastdim(const Var<T>& x) {
  int64_t cols = x.shape().back();
  int64_t rows = x.numel() / cols;
  Tensor<T> y{x.shape()};
  const T* xp = x.val().data();
  T* yp = y.data();
  for (int64_t r = 0; r < rows; ++r) {
    const T* xr = xp + r * cols;
    T* yr = yp + r * cols;
    T m = xr[0];
    for (int64_t c = 1; c < cols; ++c) m = std::max(m, xr[c]);
    T s = 0;
    for (int64_t c = 0; c < cols; ++c) { yr[c] = std::exp(xr[c] - m); s += yr[c]; }
    for (int64_t c = 0; c < cols; ++c) yr[c] /= s;
  }
  complexity::add_macs("softmax", rows * cols * 3);
  Tensor<T> yc = y;
  return make_op<T>(std::move(y), {x}, [xn = x.node(), yc, rows, cols](VarNode<T>& n) {
    const T* g = n.grad.data();
    const T* yp2 = yc.data();
    T* d = xn->ensure_grad().data();
    for (int64_t r = 0; r < rows; ++r) {
      const T* gr = g + r * cols;
      const T* yr = yp2 + r * cols;
      T dot = 0;
      for (int64_t c = 0; c < cols; ++c) dot += gr[c] * yr[c];
      T* dr = d + r * cols;
      for (int64_t c = 0; c < cols; ++c) dr[c] += yr[c] * (gr[c] - dot);
    }
  });
}

}  // namespace mcafu::ops
