#pragma once

// Selective-scan recurrence and the four-direction 2D traversal orders.
//
// Discretization: A_bar = exp(delta*A), B_bar = delta*B (zero-order hold on A,
// Euler on B). Per channel c and state n:
//   h_t = A_bar_t * h_{t-1} + B_bar_t * u_t,   y_t = sum_n C_t[n]*h_t[c,n] + D[c]*u_t
// B_t and C_t are per-step N-vectors shared across channels; delta is per
// (step, channel). State resets every `seg_len` steps (seg_len == L for a
// single uninterrupted sequence).

#include "mcafu/ops.hpp"

namespace mcafu {

enum class ScanOrder { row_lr, row_rl, col_tb, col_bt };

inline const char* scan_order_name(ScanOrder o) {
  switch (o) {
    case ScanOrder::row_lr: return "row_lr";
    case ScanOrder::row_rl: return "row_rl";
    case ScanOrder::col_tb: return "col_tb";
    case ScanOrder::col_bt: return "col_bt";
  }
  return "?";
}

/// Flattening order: position l of the sequence reads grid cell order[l]
/// (flat h*W+w offset). Each is a bijection of the H x W grid.
inline std::vector<int64_t> scan_order_indices(ScanOrder o, int64_t H, int64_t W) {
  std::vector<int64_t> idx(static_cast<size_t>(H * W));
  int64_t k = 0;
  switch (o) {
    case ScanOrder::row_lr:
      for (int64_t h = 0; h < H; ++h)
        for (int64_t w = 0; w < W; ++w) idx[k++] = h * W + w;
      break;
    case ScanOrder::row_rl:
      for (int64_t h = 0; h < H; ++h)
        for (int64_t w = W - 1; w >= 0; --w) idx[k++] = h * W + w;
      break;
    case ScanOrder::col_tb:
      for (int64_t w = 0; w < W; ++w)
        for (int64_t h = 0; h < H; ++h) idx[k++] = h * W + w;
      break;
    case ScanOrder::col_bt:
      for (int64_t w = 0; w < W; ++w)
        for (int64_t h = H - 1; h >= 0; --h) idx[k++] = h * W + w;
      break;
  }
  return idx;
}

/// Line length of an order on an H x W grid (scan state resets per line).
inline int64_t scan_line_length(ScanOrder o, int64_t H, int64_t W) {
  return (o == ScanOrder::row_lr || o == ScanOrder::row_rl) ? W : H;
}

namespace scan_detail {

/// Blocked production kernel. u/delta: (B,L,C); Bm/Cm: (B,L,N); A: (C,N);
/// D: (C). y: (B,L,C). h_out, when non-null, receives all states (B,L,C,N).
template <typename T>
void scan_forward(const Tensor<T>& u, const Tensor<T>& delta, const Tensor<T>& Bm,
                  const Tensor<T>& Cm, const Tensor<T>& A, const Tensor<T>& D, int64_t seg_len,
                  Tensor<T>& y, Tensor<T>* h_out) {
  int64_t Bn = u.shape()[0], L = u.shape()[1], C = u.shape()[2], N = A.shape()[1];
  const T* up = u.data();
  const T* dp = delta.data();
  const T* bp = Bm.data();
  const T* cp = Cm.data();
  const T* ap = A.data();
  const T* Dp = D.data();
  T* yp = y.data();
  T* hp = h_out ? h_out->data() : nullptr;
  std::vector<T> h(static_cast<size_t>(C * N));
  for (int64_t b = 0; b < Bn; ++b) {
    for (int64_t l = 0; l < L; ++l) {
      if (l % seg_len == 0) std::fill(h.begin(), h.end(), T(0));
      const T* ul = up + (b * L + l) * C;
      const T* dl = dp + (b * L + l) * C;
      const T* bl = bp + (b * L + l) * N;
      const T* cl = cp + (b * L + l) * N;
      T* yl = yp + (b * L + l) * C;
      for (int64_t c = 0; c < C; ++c) {
        T dt = dl[c];
        T uc = ul[c];
        const T* ac = ap + c * N;
        T* hc = h.data() + c * N;
        T acc = 0;
        for (int64_t n = 0; n < N; ++n) {
          T abar = std::exp(dt * ac[n]);
          hc[n] = abar * hc[n] + dt * bl[n] * uc;
          acc += cl[n] * hc[n];
        }
        yl[c] = acc + Dp[c] * uc;
      }
      if (hp) std::memcpy(hp + ((b * L + l) * C) * N, h.data(), sizeof(T) * C * N);
    }
  }
}

template <typename T>
void scan_backward(const Tensor<T>& u, const Tensor<T>& delta, const Tensor<T>& Bm,
                   const Tensor<T>& Cm, const Tensor<T>& A, const Tensor<T>& D,
                   const Tensor<T>& h_all, const Tensor<T>& dy, int64_t seg_len, Tensor<T>* du,
                   Tensor<T>* ddelta, Tensor<T>* dBm, Tensor<T>* dCm, Tensor<T>* dA,
                   Tensor<T>* dD) {
  int64_t Bn = u.shape()[0], L = u.shape()[1], C = u.shape()[2], N = A.shape()[1];
  const T* up = u.data();
  const T* dp = delta.data();
  const T* bp = Bm.data();
  const T* cp = Cm.data();
  const T* ap = A.data();
  const T* Dp = D.data();
  const T* hp = h_all.data();
  const T* gy = dy.data();
  std::vector<T> carry(static_cast<size_t>(C * N));
  for (int64_t b = 0; b < Bn; ++b) {
    for (int64_t l = L - 1; l >= 0; --l) {
      bool seg_start = (l % seg_len == 0);
      bool seg_end = (l == L - 1) || ((l + 1) % seg_len == 0);
      if (seg_end) std::fill(carry.begin(), carry.end(), T(0));
      const T* ul = up + (b * L + l) * C;
      const T* dl = dp + (b * L + l) * C;
      const T* bl = bp + (b * L + l) * N;
      const T* cl = cp + (b * L + l) * N;
      const T* gyl = gy + (b * L + l) * C;
      const T* hl = hp + ((b * L + l) * C) * N;
      const T* hprev = seg_start ? nullptr : hp + ((b * L + l - 1) * C) * N;
      for (int64_t c = 0; c < C; ++c) {
        T dt = dl[c];
        T uc = ul[c];
        T gyc = gyl[c];
        const T* ac = ap + c * N;
        const T* hlc = hl + c * N;
        T* cr = carry.data() + c * N;
        T ddt = 0, duc = 0;
        for (int64_t n = 0; n < N; ++n) {
          T G = gyc * cl[n] + cr[n];  // total gradient on h_l[c,n]
          T abar = std::exp(dt * ac[n]);
          T hprev_v = hprev ? hprev[c * N + n] : T(0);
          if (dA) (*dA)[c * N + n] += G * hprev_v * dt * abar;
          ddt += G * (hprev_v * ac[n] * abar + bl[n] * uc);
          if (dBm) (*dBm)[(b * L + l) * N + n] += G * dt * uc;
          duc += G * dt * bl[n];
          if (dCm) (*dCm)[(b * L + l) * N + n] += gyc * hlc[n];
          cr[n] = G * abar;  // flows to h_{l-1}
        }
        if (ddelta) (*ddelta)[(b * L + l) * C + c] += ddt;
        if (du) (*du)[(b * L + l) * C + c] += duc + Dp[c] * gyc;
        if (dD) (*dD)[c] += gyc * uc;
      }
    }
  }
}

/// Straight-line reference: literal per-step recurrence, kept free of the
/// blocking/pointer tricks above so it can serve as the oracle.
template <typename T>
Tensor<T> scan_reference(const Tensor<T>& u, const Tensor<T>& delta, const Tensor<T>& Bm,
                         const Tensor<T>& Cm, const Tensor<T>& A, const Tensor<T>& D,
                         int64_t seg_len) {
  int64_t Bn = u.shape()[0], L = u.shape()[1], C = u.shape()[2], N = A.shape()[1];
  Tensor<T> y{u.shape()};
  for (int64_t b = 0; b < Bn; ++b) {
    std::vector<std::vector<T>> h(static_cast<size_t>(C), std::vector<T>(static_cast<size_t>(N)));
    for (int64_t l = 0; l < L; ++l) {
      if (l % seg_len == 0)
        for (auto& hc : h) std::fill(hc.begin(), hc.end(), T(0));
      for (int64_t c = 0; c < C; ++c) {
        T dt = delta[(b * L + l) * C + c];
        T acc = 0;
        for (int64_t n = 0; n < N; ++n) {
          T a_bar = std::exp(dt * A[c * N + n]);
          T b_bar = dt * Bm[(b * L + l) * N + n];
          h[c][n] = a_bar * h[c][n] + b_bar * u[(b * L + l) * C + c];
          acc += Cm[(b * L + l) * N + n] * h[c][n];
        }
        y[(b * L + l) * C + c] = acc + D[c] * u[(b * L + l) * C + c];
      }
    }
  }
  return y;
}

}  // namespace scan_detail

namespace ops {

/// Autodiff selective-scan core. All tensor arguments are graph inputs.
template <typename T>
Var<T> scan_core(const Var<T>& u, const Var<T>& delta, const Var<T>& Bm, const Var<T>& Cm,
                 const Var<T>& A, const Var<T>& D, int64_t seg_len) {
  const auto& us = u.shape();
  if (us.size() != 3) throw ShapeError("scan_core: u must be (B,L,C)");
  int64_t L = us[1], C = us[2];
  if (delta.shape() != us) throw ShapeError("scan_core: delta shape mismatch");
  int64_t N = A.shape()[1];
  if (A.shape() != Shape{C, N}) throw ShapeError("scan_core: A must be (C,N)");
  if (Bm.shape() != Shape{us[0], L, N} || Cm.shape() != Shape{us[0], L, N})
    throw ShapeError("scan_core: B/C projections must be (B,L,N)");
  if (D.shape() != Shape{C}) throw ShapeError("scan_core: D must be (C)");
  if (seg_len <= 0 || L % seg_len != 0) throw ShapeError("scan_core: bad segment length");
  if (!all_finite(A.val()) || !all_finite(delta.val()))
    throw NumericError("scan_core: non-finite scan parameters");

  bool need_grad = grad_enabled() &&
                   (u.requires_grad() || delta.requires_grad() || Bm.requires_grad() ||
                    Cm.requires_grad() || A.requires_grad() || D.requires_grad());
  Tensor<T> y{us};
  Tensor<T> h_all;
  if (need_grad) h_all = Tensor<T>({us[0], L, C, N});
  scan_detail::scan_forward(u.val(), delta.val(), Bm.val(), Cm.val(), A.val(), D.val(), seg_len, y,
                            need_grad ? &h_all : nullptr);
  complexity::add_macs("scan", us[0] * L * C * (4 * N + 2));
  return make_op<T>(
      std::move(y), {u, delta, Bm, Cm, A, D},
      [un = u.node(), dn = delta.node(), bn = Bm.node(), cn = Cm.node(), an = A.node(),
       Dn = D.node(), h_all, seg_len](VarNode<T>& n) {
        scan_detail::scan_backward(
            un->value, dn->value, bn->value, cn->value, an->value, Dn->value, h_all, n.grad,
            seg_len, un->requires_grad ? &un->ensure_grad() : nullptr,
            dn->requires_grad ? &dn->ensure_grad() : nullptr,
            bn->requires_grad ? &bn->ensure_grad() : nullptr,
            cn->requires_grad ? &cn->ensure_grad() : nullptr,
            an->requires_grad ? &an->ensure_grad() : nullptr,
            Dn->requires_grad ? &Dn->ensure_grad() : nullptr);
      });
}

/// Gathers an NCHW map into (B,L,C) sequence order; order[l] is a flat h*W+w
/// offset and must be a bijection.
template <typename T>
Var<T> gather_scan(const Var<T>& x, std::shared_ptr<const std::vector<int64_t>> order) {
  check_rank4(x.shape(), "gather_scan");
  int64_t B = x.shape()[0], C = x.shape()[1], HW = x.shape()[2] * x.shape()[3];
  if (static_cast<int64_t>(order->size()) != HW) throw ShapeError("gather_scan: order size mismatch");
  Tensor<T> y{{B, HW, C}};
  const T* xp = x.val().data();
  T* yp = y.data();
  for (int64_t b = 0; b < B; ++b)
    for (int64_t l = 0; l < HW; ++l) {
      int64_t src = (*order)[l];
      T* yrow = yp + (b * HW + l) * C;
      for (int64_t c = 0; c < C; ++c) yrow[c] = xp[(b * C + c) * HW + src];
    }
  return make_op<T>(std::move(y), {x}, [xn = x.node(), order, B, C, HW](VarNode<T>& n) {
    T* d = xn->ensure_grad().data();
    const T* g = n.grad.data();
    for (int64_t b = 0; b < B; ++b)
      for (int64_t l = 0; l < HW; ++l) {
        int64_t src = (*order)[l];
        const T* grow = g + (b * HW + l) * C;
        for (int64_t c = 0; c < C; ++c) d[(b * C + c) * HW + src] += grow[c];
      }
  });
}

/// Inverse of gather_scan.
template <typename T>
Var<T> scatter_scan(const Var<T>& y, std::shared_ptr<const std::vector<int64_t>> order, int64_t H,
                    int64_t W) {
  int64_t B = y.shape()[0], L = y.shape()[1], C = y.shape()[2];
  if (L != H * W || static_cast<int64_t>(order->size()) != L)
    throw ShapeError("scatter_scan: order/grid mismatch");
  Tensor<T> out{{B, C, H, W}};
  const T* yp = y.val().data();
  T* op = out.data();
  for (int64_t b = 0; b < B; ++b)
    for (int64_t l = 0; l < L; ++l) {
      int64_t dst = (*order)[l];
      const T* yrow = yp + (b * L + l) * C;
      for (int64_t c = 0; c < C; ++c) op[(b * C + c) * L + dst] = yrow[c];
    }
  return make_op<T>(std::move(out), {y}, [yn = y.node(), order, B, C, L](VarNode<T>& n) {
    T* d = yn->ensure_grad().data();
    const T* g = n.grad.data();
    for (int64_t b = 0; b < B; ++b)
      for (int64_t l = 0; l < L; ++l) {
        int64_t dst = (*order)[l];
        T* drow = d + (b * L + l) * C;
        for (int64_t c = 0; c < C; ++c) drow[c] += g[(b * C + c) * L + dst];
      }
  });
}

}  // namespace ops
}  // namespace mcafu
