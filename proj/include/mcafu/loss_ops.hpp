#pragma once

// Training losses as fused graph ops on logits. Multi-class losses take
// integer label maps; the binary variants expect a single logit channel.

#include "mcafu/ops.hpp"

namespace mcafu::ops {

/// Mean pixelwise cross-entropy from logits (N,C,H,W) and labels (N,H,W).
template <typename T>
Var<T> softmax_cross_entropy(const Var<T>& logits, const Tensor<int32_t>& labels) {
  check_rank4(logits.shape(), "softmax_cross_entropy");
  int64_t N = logits.shape()[0], C = logits.shape()[1], HW = logits.shape()[2] * logits.shape()[3];
  if (labels.shape() != Shape{N, logits.shape()[2], logits.shape()[3]})
    throw ShapeError("softmax_cross_entropy: label map shape mismatch");
  const T* zp = logits.val().data();
  double loss = 0;
  for (int64_t n = 0; n < N; ++n)
    for (int64_t i = 0; i < HW; ++i) {
      int32_t lab = labels[n * HW + i];
      if (lab < 0 || lab >= C) throw ShapeError("softmax_cross_entropy: label out of range");
      T m = zp[(n * C) * HW + i];
      for (int64_t c = 1; c < C; ++c) m = std::max(m, zp[(n * C + c) * HW + i]);
      double s = 0;
      for (int64_t c = 0; c < C; ++c) s += std::exp(double(zp[(n * C + c) * HW + i] - m));
      loss += double(m) + std::log(s) - double(zp[(n * C + lab) * HW + i]);
    }
  int64_t count = N * HW;
  Tensor<T> y = Tensor<T>::scalar(T(loss / double(count)));
  return make_op<T>(std::move(y), {logits}, [ln = logits.node(), labels, N, C, HW, count](VarNode<T>& nd) {
    T g0 = nd.grad[0] / T(count);
    const T* zp2 = ln->value.data();
    T* d = ln->ensure_grad().data();
    for (int64_t n = 0; n < N; ++n)
      for (int64_t i = 0; i < HW; ++i) {
        T m = zp2[(n * C) * HW + i];
        for (int64_t c = 1; c < C; ++c) m = std::max(m, zp2[(n * C + c) * HW + i]);
        T s = 0;
        for (int64_t c = 0; c < C; ++c) s += std::exp(zp2[(n * C + c) * HW + i] - m);
        int32_t lab = labels[n * HW + i];
        for (int64_t c = 0; c < C; ++c) {
          T p = std::exp(zp2[(n * C + c) * HW + i] - m) / s;
          d[(n * C + c) * HW + i] += g0 * (p - (c == lab ? T(1) : T(0)));
        }
      }
  });
}

/// Mean binary cross-entropy from a single logit channel (N,1,H,W) against
/// {0,1} labels (N,H,W). Stable formulation.
template <typename T>
Var<T> sigmoid_bce(const Var<T>& logits, const Tensor<int32_t>& labels) {
  check_rank4(logits.shape(), "sigmoid_bce");
  if (logits.shape()[1] != 1) throw ShapeError("sigmoid_bce: expected a single logit channel");
  int64_t N = logits.shape()[0], HW = logits.shape()[2] * logits.shape()[3];
  if (labels.shape() != Shape{N, logits.shape()[2], logits.shape()[3]})
    throw ShapeError("sigmoid_bce: label map shape mismatch");
  const T* zp = logits.val().data();
  double loss = 0;
  for (int64_t i = 0; i < N * HW; ++i) {
    double z = zp[i], y = labels[i] ? 1.0 : 0.0;
    loss += std::max(z, 0.0) - z * y + std::log1p(std::exp(-std::abs(z)));
  }
  int64_t count = N * HW;
  Tensor<T> out = Tensor<T>::scalar(T(loss / double(count)));
  return make_op<T>(std::move(out), {logits}, [ln = logits.node(), labels, count](VarNode<T>& nd) {
    T g0 = nd.grad[0] / T(count);
    const T* zp2 = ln->value.data();
    T* d = ln->ensure_grad().data();
    for (int64_t i = 0; i < count; ++i) {
      T p = T(1) / (T(1) + std::exp(-zp2[i]));
      d[i] += g0 * (p - (labels[i] ? T(1) : T(0)));
    }
  });
}

namespace detail {

/// Soft-Dice statistics and pixel gradient in probability space.
/// Foreground classes only (class 0 is background) unless the map is binary.
template <typename T>
struct DiceStats {
  std::vector<double> inter, psum, ysum;  // indexed by class id
  std::vector<int> fg;                    // participating class ids
};

}  // namespace detail

/// Soft Dice loss. Multi-class: probabilities via channel softmax, averaged
/// over foreground classes. Binary (single channel): sigmoid probability of
/// the foreground.
template <typename T>
Var<T> soft_dice(const Var<T>& logits, const Tensor<int32_t>& labels, double smooth = 1.0) {
  check_rank4(logits.shape(), "soft_dice");
  int64_t N = logits.shape()[0], C = logits.shape()[1], HW = logits.shape()[2] * logits.shape()[3];
  if (labels.shape() != Shape{N, logits.shape()[2], logits.shape()[3]})
    throw ShapeError("soft_dice: label map shape mismatch");
  bool binary = (C == 1);

  // Probabilities (materialized; reused in backward).
  Tensor<T> probs{logits.shape()};
  const T* zp = logits.val().data();
  T* pp = probs.data();
  if (binary) {
    for (int64_t i = 0; i < N * HW; ++i) pp[i] = T(1) / (T(1) + std::exp(-zp[i]));
  } else {
    for (int64_t n = 0; n < N; ++n)
      for (int64_t i = 0; i < HW; ++i) {
        T m = zp[(n * C) * HW + i];
        for (int64_t c = 1; c < C; ++c) m = std::max(m, zp[(n * C + c) * HW + i]);
        T s = 0;
        for (int64_t c = 0; c < C; ++c) {
          T e = std::exp(zp[(n * C + c) * HW + i] - m);
          pp[(n * C + c) * HW + i] = e;
          s += e;
        }
        for (int64_t c = 0; c < C; ++c) pp[(n * C + c) * HW + i] /= s;
      }
  }

  std::vector<int> fg;
  if (binary) fg = {0};  // channel 0 holds the foreground probability
  else
    for (int c = 1; c < C; ++c) fg.push_back(c);

  std::vector<double> inter(C, 0), psum(C, 0), ysum(C, 0);
  for (int64_t n = 0; n < N; ++n)
    for (int64_t i = 0; i < HW; ++i) {
      int32_t lab = labels[n * HW + i];
      for (int c : fg) {
        double p = pp[(n * C + c) * HW + i];
        bool is = binary ? (lab != 0) : (lab == c);
        psum[c] += p;
        if (is) { inter[c] += p; ysum[c] += 1.0; }
      }
    }
  double loss = 0;
  for (int c : fg) {
    double denom = psum[c] + ysum[c] + smooth;
    loss += 1.0 - (2.0 * inter[c] + smooth) / denom;
  }
  loss /= double(fg.size());
  Tensor<T> out = Tensor<T>::scalar(T(loss));

  return make_op<T>(
      std::move(out), {logits},
      [ln = logits.node(), labels, probs, inter, psum, ysum, fg, smooth, N, C, HW,
       binary](VarNode<T>& nd) {
        T g0 = nd.grad[0];
        const T* pp2 = probs.data();
        T* d = ln->ensure_grad().data();
        double scale = 1.0 / double(fg.size());
        // dL/dp_c per pixel, then chain through sigmoid/softmax.
        std::vector<double> coef_y(fg.size()), coef_p(fg.size());
        for (size_t k = 0; k < fg.size(); ++k) {
          int c = fg[k];
          double denom = psum[c] + ysum[c] + smooth;
          coef_y[k] = -scale * 2.0 / denom;                                  // multiplies [y==c]
          coef_p[k] = scale * (2.0 * inter[c] + smooth) / (denom * denom);   // constant per class
        }
        for (int64_t n = 0; n < N; ++n)
          for (int64_t i = 0; i < HW; ++i) {
            int32_t lab = labels[n * HW + i];
            if (binary) {
              double p = pp2[n * HW + i];
              double dp = coef_y[0] * ((lab != 0) ? 1.0 : 0.0) + coef_p[0];
              d[n * HW + i] += g0 * T(dp * p * (1.0 - p));
            } else {
              double dot = 0;
              std::vector<double> dp(C, 0.0);
              for (size_t k = 0; k < fg.size(); ++k) {
                int c = fg[k];
                dp[c] = coef_y[k] * (lab == c ? 1.0 : 0.0) + coef_p[k];
              }
              for (int64_t c = 0; c < C; ++c) dot += dp[c] * pp2[(n * C + c) * HW + i];
              for (int64_t c = 0; c < C; ++c) {
                double p = pp2[(n * C + c) * HW + i];
                d[(n * C + c) * HW + i] += g0 * T(p * (dp[c] - dot));
              }
            }
          }
      });
}

/// Probability-space soft Dice (no graph); used by tests and reporting.
template <typename T>
double soft_dice_probs(const Tensor<T>& probs, const Tensor<int32_t>& labels, double smooth,
                       bool binary) {
  int64_t N = probs.shape()[0], C = probs.shape()[1], HW = probs.shape()[2] * probs.shape()[3];
  std::vector<int> fg;
  if (binary) fg = {0};
  else
    for (int c = 1; c < C; ++c) fg.push_back(c);
  double loss = 0;
  for (int c : fg) {
    double inter = 0, psum = 0, ysum = 0;
    for (int64_t n = 0; n < N; ++n)
      for (int64_t i = 0; i < HW; ++i) {
        double p = probs[(n * C + c) * HW + i];
        bool is = binary ? (labels[n * HW + i] != 0) : (labels[n * HW + i] == c);
        psum += p;
        if (is) { inter += p; ysum += 1.0; }
      }
    loss += 1.0 - (2.0 * inter + smooth) / (psum + ysum + smooth);
  }
  return loss / double(fg.size());
}

}  // namespace mcafu::ops
