#pragma once

// Convolution, normalization, pooling and resampling primitives.

#include "mcafu/ops.hpp"

namespace mcafu::ops {

namespace detail {

template <typename T>
void im2col(const T* x, int64_t C, int64_t H, int64_t W, int64_t kh, int64_t kw, int64_t stride,
            int64_t pad, int64_t Ho, int64_t Wo, T* col) {
  // col is (C*kh*kw, Ho*Wo) row-major
  for (int64_t c = 0; c < C; ++c)
    for (int64_t ky = 0; ky < kh; ++ky)
      for (int64_t kx = 0; kx < kw; ++kx) {
        T* crow = col + ((c * kh + ky) * kw + kx) * Ho * Wo;
        for (int64_t oy = 0; oy < Ho; ++oy) {
          int64_t iy = oy * stride - pad + ky;
          if (iy < 0 || iy >= H) {
            std::fill(crow + oy * Wo, crow + (oy + 1) * Wo, T(0));
            continue;
          }
          const T* xrow = x + (c * H + iy) * W;
          for (int64_t ox = 0; ox < Wo; ++ox) {
            int64_t ix = ox * stride - pad + kx;
            crow[oy * Wo + ox] = (ix >= 0 && ix < W) ? xrow[ix] : T(0);
          }
        }
      }
}

template <typename T>
void col2im_acc(const T* col, int64_t C, int64_t H, int64_t W, int64_t kh, int64_t kw,
                int64_t stride, int64_t pad, int64_t Ho, int64_t Wo, T* dx) {
  for (int64_t c = 0; c < C; ++c)
    for (int64_t ky = 0; ky < kh; ++ky)
      for (int64_t kx = 0; kx < kw; ++kx) {
        const T* crow = col + ((c * kh + ky) * kw + kx) * Ho * Wo;
        for (int64_t oy = 0; oy < Ho; ++oy) {
          int64_t iy = oy * stride - pad + ky;
          if (iy < 0 || iy >= H) continue;
          T* xrow = dx + (c * H + iy) * W;
          for (int64_t ox = 0; ox < Wo; ++ox) {
            int64_t ix = ox * stride - pad + kx;
            if (ix >= 0 && ix < W) xrow[ix] += crow[oy * Wo + ox];
          }
        }
      }
}

}  // namespace detail

/// conv2d on NCHW. w is (Cout, Cin/groups, kh, kw); square stride/pad.
template <typename T>
Var<T> conv2d(const Var<T>& x, const Var<T>& w, const Var<T>& b, int64_t stride, int64_t pad,
              int64_t groups = 1) {
  check_rank4(x.shape(), "conv2d");
  check_rank4(w.shape(), "conv2d weight");
  int64_t N = x.shape()[0], C = x.shape()[1], H = x.shape()[2], W = x.shape()[3];
  int64_t Cout = w.shape()[0], Cing = w.shape()[1], kh = w.shape()[2], kw = w.shape()[3];
  if (C != Cing * groups) throw ShapeError("conv2d: input channels " + std::to_string(C) +
                                           " incompatible with weight " + shape_str(w.shape()));
  if (Cout % groups != 0) throw ShapeError("conv2d: Cout not divisible by groups");
  int64_t Ho = (H + 2 * pad - kh) / stride + 1;
  int64_t Wo = (W + 2 * pad - kw) / stride + 1;
  if (Ho <= 0 || Wo <= 0) throw ShapeError("conv2d: output would be empty");
  int64_t Coutg = Cout / groups;
  int64_t K = Cing * kh * kw;
  int64_t L = Ho * Wo;

  Tensor<T> y{{N, Cout, Ho, Wo}};
  {
    std::vector<T> col(static_cast<size_t>(C * kh * kw * L));
    for (int64_t n = 0; n < N; ++n) {
      detail::im2col(x.val().data() + n * C * H * W, C, H, W, kh, kw, stride, pad, Ho, Wo,
                     col.data());
      for (int64_t g = 0; g < groups; ++g) {
        CMatMap<T> Wm(w.val().data() + g * Coutg * K, Coutg, K);
        CMatMap<T> Cm(col.data() + g * K * L, K, L);
        MatMap<T> Ym(y.data() + (n * Cout + g * Coutg) * L, Coutg, L);
        Ym.noalias() = Wm * Cm;
      }
    }
    if (b.defined()) {
      T* yp = y.data();
      const T* bp = b.val().data();
      for (int64_t n = 0; n < N; ++n)
        for (int64_t c = 0; c < Cout; ++c) {
          T bb = bp[c];
          T* row = yp + (n * Cout + c) * L;
          for (int64_t i = 0; i < L; ++i) row[i] += bb;
        }
    }
  }
  complexity::add_macs("conv", N * Cout * L * K);

  std::vector<Var<T>> parents = b.defined() ? std::vector<Var<T>>{x, w, b} : std::vector<Var<T>>{x, w};
  return make_op<T>(
      std::move(y), parents,
      [xn = x.node(), wn = w.node(), bn = b.defined() ? b.node() : nullptr, N, C, H, W, Cout, Cing,
       kh, kw, stride, pad, Ho, Wo, groups, Coutg, K, L](VarNode<T>& n) {
        std::vector<T> col(static_cast<size_t>(C * kh * kw * L));
        std::vector<T> dcol;
        if (xn->requires_grad) dcol.resize(static_cast<size_t>(C * kh * kw * L));
        for (int64_t img = 0; img < N; ++img) {
          detail::im2col(xn->value.data() + img * C * H * W, C, H, W, kh, kw, stride, pad, Ho, Wo,
                         col.data());
          for (int64_t g = 0; g < groups; ++g) {
            CMatMap<T> G(n.grad.data() + (img * Cout + g * Coutg) * L, Coutg, L);
            if (wn->requires_grad) {
              MatMap<T> DW(wn->ensure_grad().data() + g * Coutg * K, Coutg, K);
              CMatMap<T> Cm(col.data() + g * K * L, K, L);
              DW.noalias() += G * Cm.transpose();
            }
            if (xn->requires_grad) {
              MatMap<T> DC(dcol.data() + g * K * L, K, L);
              CMatMap<T> Wm(wn->value.data() + g * Coutg * K, Coutg, K);
              DC.noalias() = Wm.transpose() * G;
            }
          }
          if (xn->requires_grad)
            detail::col2im_acc(dcol.data(), C, H, W, kh, kw, stride, pad, Ho, Wo,
                               xn->ensure_grad().data() + img * C * H * W);
        }
        if (bn && bn->requires_grad) {
          T* db = bn->ensure_grad().data();
          const T* g = n.grad.data();
          for (int64_t img = 0; img < N; ++img)
            for (int64_t c = 0; c < Cout; ++c) {
              T acc = 0;
              const T* row = g + (img * Cout + c) * L;
              for (int64_t i = 0; i < L; ++i) acc += row[i];
              db[c] += acc;
            }
        }
      });
}

/// Batch norm over (N,H,W) per channel. Running stats live outside the graph
/// and are updated in training mode (PyTorch semantics: biased variance for
/// normalization, unbiased for the running estimate).
template <typename T>
Var<T> batch_norm2d(const Var<T>& x, const Var<T>& gamma, const Var<T>& beta,
                    Tensor<T>& running_mean, Tensor<T>& running_var, bool training,
                    double momentum = 0.1, double eps = 1e-5) {
  check_rank4(x.shape(), "batch_norm2d");
  int64_t N = x.shape()[0], C = x.shape()[1], HW = x.shape()[2] * x.shape()[3];
  int64_t M = N * HW;
  Tensor<T> y{x.shape()};
  Tensor<T> mean{{C}}, invstd{{C}};
  const T* xp = x.val().data();

  if (training) {
    for (int64_t c = 0; c < C; ++c) {
      T acc = 0;
      for (int64_t n = 0; n < N; ++n) {
        const T* row = xp + (n * C + c) * HW;
        for (int64_t i = 0; i < HW; ++i) acc += row[i];
      }
      mean[c] = acc / T(M);
    }
    for (int64_t c = 0; c < C; ++c) {
      T acc = 0;
      for (int64_t n = 0; n < N; ++n) {
        const T* row = xp + (n * C + c) * HW;
        for (int64_t i = 0; i < HW; ++i) {
          T d = row[i] - mean[c];
          acc += d * d;
        }
      }
      T var = acc / T(M);
      invstd[c] = T(1) / std::sqrt(var + T(eps));
      running_mean[c] = T(1 - momentum) * running_mean[c] + T(momentum) * mean[c];
      T unbiased = M > 1 ? acc / T(M - 1) : var;
      running_var[c] = T(1 - momentum) * running_var[c] + T(momentum) * unbiased;
    }
  } else {
    for (int64_t c = 0; c < C; ++c) {
      mean[c] = running_mean[c];
      invstd[c] = T(1) / std::sqrt(running_var[c] + T(eps));
    }
  }

  {
    const T* gp = gamma.val().data();
    const T* bp = beta.val().data();
    T* yp = y.data();
    for (int64_t n = 0; n < N; ++n)
      for (int64_t c = 0; c < C; ++c) {
        T mu = mean[c], is = invstd[c], ga = gp[c], be = bp[c];
        const T* row = xp + (n * C + c) * HW;
        T* yrow = yp + (n * C + c) * HW;
        for (int64_t i = 0; i < HW; ++i) yrow[i] = (row[i] - mu) * is * ga + be;
      }
  }
  complexity::add_macs("norm", N * C * HW);

  return make_op<T>(
      std::move(y), {x, gamma, beta},
      [xn = x.node(), gn = gamma.node(), bn = beta.node(), mean, invstd, training, N, C,
       HW](VarNode<T>& n) {
        int64_t M = N * HW;
        const T* g = n.grad.data();
        const T* xp2 = xn->value.data();
        const T* ga = gn->value.data();
        for (int64_t c = 0; c < C; ++c) {
          T mu = mean[c], is = invstd[c];
          // per-channel sums of dy and dy*xhat
          T sum_dy = 0, sum_dyx = 0;
          for (int64_t b = 0; b < N; ++b) {
            const T* grow = g + (b * C + c) * HW;
            const T* xrow = xp2 + (b * C + c) * HW;
            for (int64_t i = 0; i < HW; ++i) {
              T xhat = (xrow[i] - mu) * is;
              sum_dy += grow[i];
              sum_dyx += grow[i] * xhat;
            }
          }
          if (gn->requires_grad) gn->ensure_grad()[c] += sum_dyx;
          if (bn->requires_grad) bn->ensure_grad()[c] += sum_dy;
          if (xn->requires_grad) {
            T* d = xn->ensure_grad().data();
            T k = ga[c] * is;
            if (training) {
              T mdy = sum_dy / T(M), mdyx = sum_dyx / T(M);
              for (int64_t b = 0; b < N; ++b) {
                const T* grow = g + (b * C + c) * HW;
                const T* xrow = xp2 + (b * C + c) * HW;
                T* drow = d + (b * C + c) * HW;
                for (int64_t i = 0; i < HW; ++i) {
                  T xhat = (xrow[i] - mu) * is;
                  drow[i] += k * (grow[i] - mdy - xhat * mdyx);
                }
              }
            } else {
              for (int64_t b = 0; b < N; ++b) {
                const T* grow = g + (b * C + c) * HW;
                T* drow = d + (b * C + c) * HW;
                for (int64_t i = 0; i < HW; ++i) drow[i] += k * grow[i];
              }
            }
          }
        }
      });
}

namespace detail {
// Shared core for layer norm over an axis with given stride/count layout.
// rows index the independent normalization groups; within a group, elements
// sit at base + j*stride for j in [0,C).
template <typename T>
struct LnLayout {
  int64_t groups;
  int64_t C;
  std::function<int64_t(int64_t)> base;  // group -> flat base offset
  int64_t stride;
};
}  // namespace detail

/// Layer norm over the last axis of any-rank input.
template <typename T>
Var<T> layer_norm_lastdim(const Var<T>& x, const Var<T>& gamma, const Var<T>& beta,
                          double eps = 1e-5) {
  int64_t C = x.shape().back();
  int64_t rows = x.numel() / C;
  if (gamma.shape() != Shape{C} || beta.shape() != Shape{C})
    throw ShapeError("layer_norm_lastdim: affine params must be (C)");
  Tensor<T> y{x.shape()};
  Tensor<T> mean{{rows}}, invstd{{rows}};
  const T* xp = x.val().data();
  const T* gp = gamma.val().data();
  const T* bp = beta.val().data();
  T* yp = y.data();
  for (int64_t r = 0; r < rows; ++r) {
    const T* xr = xp + r * C;
    T mu = 0;
    for (int64_t c = 0; c < C; ++c) mu += xr[c];
    mu /= T(C);
    T var = 0;
    for (int64_t c = 0; c < C; ++c) { T d = xr[c] - mu; var += d * d; }
    var /= T(C);
    T is = T(1) / std::sqrt(var + T(eps));
    mean[r] = mu;
    invstd[r] = is;
    T* yr = yp + r * C;
    for (int64_t c = 0; c < C; ++c) yr[c] = (xr[c] - mu) * is * gp[c] + bp[c];
  }
  complexity::add_macs("norm", rows * C * 2);
  return make_op<T>(
      std::move(y), {x, gamma, beta},
      [xn = x.node(), gn = gamma.node(), bn = beta.node(), mean, invstd, rows, C](VarNode<T>& n) {
        const T* g = n.grad.data();
        const T* xp2 = xn->value.data();
        const T* ga = gn->value.data();
        for (int64_t r = 0; r < rows; ++r) {
          const T* gr = g + r * C;
          const T* xr = xp2 + r * C;
          T mu = mean[r], is = invstd[r];
          T sum_dxh = 0, sum_dxh_xh = 0;
          for (int64_t c = 0; c < C; ++c) {
            T xhat = (xr[c] - mu) * is;
            T dxh = gr[c] * ga[c];
            sum_dxh += dxh;
            sum_dxh_xh += dxh * xhat;
            if (gn->requires_grad) gn->ensure_grad()[c] += gr[c] * xhat;
            if (bn->requires_grad) bn->ensure_grad()[c] += gr[c];
          }
          if (xn->requires_grad) {
            T* dr = xn->ensure_grad().data() + r * C;
            T m1 = sum_dxh / T(C), m2 = sum_dxh_xh / T(C);
            for (int64_t c = 0; c < C; ++c) {
              T xhat = (xr[c] - mu) * is;
              dr[c] += is * (gr[c] * ga[c] - m1 - xhat * m2);
            }
          }
        }
      });
}

/// Layer norm across channels at each spatial position of an NCHW map.
template <typename T>
Var<T> layer_norm_channels(const Var<T>& x, const Var<T>& gamma, const Var<T>& beta,
                           double eps = 1e-5) {
  check_rank4(x.shape(), "layer_norm_channels");
  int64_t H = x.shape()[2], W = x.shape()[3];
  auto xl = nchw_to_nlc(x);
  auto yl = layer_norm_lastdim(xl, gamma, beta, eps);
  return nlc_to_nchw(yl, H, W);
}

template <typename T>
Var<T> max_pool2d(const Var<T>& x, int64_t k, int64_t stride, int64_t pad) {
  check_rank4(x.shape(), "max_pool2d");
  int64_t N = x.shape()[0], C = x.shape()[1], H = x.shape()[2], W = x.shape()[3];
  int64_t Ho = (H + 2 * pad - k) / stride + 1;
  int64_t Wo = (W + 2 * pad - k) / stride + 1;
  Tensor<T> y{{N, C, Ho, Wo}};
  auto arg = std::make_shared<std::vector<int64_t>>(N * C * Ho * Wo);
  const T* xp = x.val().data();
  T* yp = y.data();
  for (int64_t nc = 0; nc < N * C; ++nc) {
    const T* plane = xp + nc * H * W;
    for (int64_t oy = 0; oy < Ho; ++oy)
      for (int64_t ox = 0; ox < Wo; ++ox) {
        T best = -std::numeric_limits<T>::infinity();
        int64_t bi = -1;
        for (int64_t ky = 0; ky < k; ++ky) {
          int64_t iy = oy * stride - pad + ky;
          if (iy < 0 || iy >= H) continue;
          for (int64_t kx = 0; kx < k; ++kx) {
            int64_t ix = ox * stride - pad + kx;
            if (ix < 0 || ix >= W) continue;
            T v = plane[iy * W + ix];
            if (v > best) { best = v; bi = iy * W + ix; }
          }
        }
        yp[nc * Ho * Wo + oy * Wo + ox] = best;
        (*arg)[nc * Ho * Wo + oy * Wo + ox] = bi;
      }
  }
  complexity::add_macs("pool", N * C * Ho * Wo * k * k);
  return make_op<T>(std::move(y), {x}, [xn = x.node(), arg, N, C, H, W, Ho, Wo](VarNode<T>& n) {
    const T* g = n.grad.data();
    T* d = xn->ensure_grad().data();
    for (int64_t nc = 0; nc < N * C; ++nc) {
      const T* grow = g + nc * Ho * Wo;
      T* dplane = d + nc * H * W;
      for (int64_t i = 0; i < Ho * Wo; ++i) {
        int64_t bi = (*arg)[nc * Ho * Wo + i];
        if (bi >= 0) dplane[bi] += grow[i];
      }
    }
  });
}

/// Adaptive average pooling; windows follow floor/ceil boundaries so any
/// output size is valid.
template <typename T>
Var<T> adaptive_avg_pool2d(const Var<T>& x, int64_t oh, int64_t ow) {
  check_rank4(x.shape(), "adaptive_avg_pool2d");
  int64_t N = x.shape()[0], C = x.shape()[1], H = x.shape()[2], W = x.shape()[3];
  auto start = [](int64_t i, int64_t in, int64_t out) { return (i * in) / out; };
  auto end = [](int64_t i, int64_t in, int64_t out) { return ((i + 1) * in + out - 1) / out; };
  Tensor<T> y{{N, C, oh, ow}};
  const T* xp = x.val().data();
  T* yp = y.data();
  for (int64_t nc = 0; nc < N * C; ++nc) {
    const T* plane = xp + nc * H * W;
    for (int64_t oy = 0; oy < oh; ++oy) {
      int64_t y0 = start(oy, H, oh), y1 = end(oy, H, oh);
      for (int64_t ox = 0; ox < ow; ++ox) {
        int64_t x0 = start(ox, W, ow), x1 = end(ox, W, ow);
        T acc = 0;
        for (int64_t iy = y0; iy < y1; ++iy)
          for (int64_t ix = x0; ix < x1; ++ix) acc += plane[iy * W + ix];
        yp[nc * oh * ow + oy * ow + ox] = acc / T((y1 - y0) * (x1 - x0));
      }
    }
  }
  complexity::add_macs("pool", N * C * H * W);
  return make_op<T>(std::move(y), {x},
                    [xn = x.node(), N, C, H, W, oh, ow, start, end](VarNode<T>& n) {
                      const T* g = n.grad.data();
                      T* d = xn->ensure_grad().data();
                      for (int64_t nc = 0; nc < N * C; ++nc) {
                        T* dplane = d + nc * H * W;
                        for (int64_t oy = 0; oy < oh; ++oy) {
                          int64_t y0 = start(oy, H, oh), y1 = end(oy, H, oh);
                          for (int64_t ox = 0; ox < ow; ++ox) {
                            int64_t x0 = start(ox, W, ow), x1 = end(ox, W, ow);
                            T gg = g[nc * oh * ow + oy * ow + ox] / T((y1 - y0) * (x1 - x0));
                            for (int64_t iy = y0; iy < y1; ++iy)
                              for (int64_t ix = x0; ix < x1; ++ix) dplane[iy * W + ix] += gg;
                          }
                        }
                      }
                    });
}

/// Bilinear x2 upsampling (half-pixel centers, edges clamped).
template <typename T>
Var<T> upsample_bilinear2x(const Var<T>& x) {
  check_rank4(x.shape(), "upsample_bilinear2x");
  int64_t N = x.shape()[0], C = x.shape()[1], H = x.shape()[2], W = x.shape()[3];
  int64_t Ho = H * 2, Wo = W * 2;
  Tensor<T> y{{N, C, Ho, Wo}};
  // Precompute 1-d taps once; same for rows and columns up to extent.
  auto taps = [](int64_t out, int64_t in) {
    std::vector<std::tuple<int64_t, int64_t, T>> t(out);  // (i0, i1, w1)
    for (int64_t o = 0; o < out; ++o) {
      double src = (o + 0.5) / 2.0 - 0.5;
      double fl = std::floor(src);
      int64_t i0 = static_cast<int64_t>(fl);
      T w1 = static_cast<T>(src - fl);
      int64_t i1 = i0 + 1;
      i0 = std::clamp<int64_t>(i0, 0, in - 1);
      i1 = std::clamp<int64_t>(i1, 0, in - 1);
      t[o] = {i0, i1, w1};
    }
    return t;
  };
  auto ty = taps(Ho, H);
  auto tx = taps(Wo, W);
  const T* xp = x.val().data();
  T* yp = y.data();
  for (int64_t nc = 0; nc < N * C; ++nc) {
    const T* plane = xp + nc * H * W;
    T* oplane = yp + nc * Ho * Wo;
    for (int64_t oy = 0; oy < Ho; ++oy) {
      auto [y0, y1, wy] = ty[oy];
      for (int64_t ox = 0; ox < Wo; ++ox) {
        auto [x0, x1, wx] = tx[ox];
        T v00 = plane[y0 * W + x0], v01 = plane[y0 * W + x1];
        T v10 = plane[y1 * W + x0], v11 = plane[y1 * W + x1];
        oplane[oy * Wo + ox] = (T(1) - wy) * ((T(1) - wx) * v00 + wx * v01) +
                               wy * ((T(1) - wx) * v10 + wx * v11);
      }
    }
  }
  complexity::add_macs("resize", N * C * Ho * Wo * 4);
  return make_op<T>(std::move(y), {x}, [xn = x.node(), ty, tx, N, C, H, W, Ho, Wo](VarNode<T>& n) {
    const T* g = n.grad.data();
    T* d = xn->ensure_grad().data();
    for (int64_t nc = 0; nc < N * C; ++nc) {
      T* dplane = d + nc * H * W;
      const T* gplane = g + nc * Ho * Wo;
      for (int64_t oy = 0; oy < Ho; ++oy) {
        auto [y0, y1, wy] = ty[oy];
        for (int64_t ox = 0; ox < Wo; ++ox) {
          auto [x0, x1, wx] = tx[ox];
          T gg = gplane[oy * Wo + ox];
          dplane[y0 * W + x0] += gg * (T(1) - wy) * (T(1) - wx);
          dplane[y0 * W + x1] += gg * (T(1) - wy) * wx;
          dplane[y1 * W + x0] += gg * wy * (T(1) - wx);
          dplane[y1 * W + x1] += gg * wy * wx;
        }
      }
    }
  });
}

}  // namespace mcafu::ops
