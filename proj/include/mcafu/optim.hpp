#pragma once

// Adam/AdamW and the cosine-annealing warm-restart schedule.

#include "mcafu/layers.hpp"

namespace mcafu {

/// Cosine annealing with warm restarts; the period is a fixed number of
/// epochs. lr(t) is continuous within a cycle and snaps back to the initial
/// rate at each restart. `epoch_pos` is the fractional epoch position.
inline double cosine_warm_restart_lr(double initial_lr, double epoch_pos, double period,
                                     double eta_min = 0.0) {
  if (period <= 0) return initial_lr;
  double t_cur = std::fmod(epoch_pos, period);
  constexpr double kPi = 3.14159265358979323846;
  return eta_min + 0.5 * (initial_lr - eta_min) * (1.0 + std::cos(kPi * t_cur / period));
}

/// Decoupled-weight-decay Adam; plain mode skips the decay term.
template <typename T>
class AdamW {
 public:
  AdamW(ParamStore<T>& ps, double lr, double weight_decay, bool decoupled_decay = true,
        double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8)
      : ps_(ps), lr_(lr), wd_(weight_decay), decoupled_(decoupled_decay), b1_(beta1), b2_(beta2),
        eps_(eps) {
    for (auto& p : ps.params()) {
      m_.emplace_back(p.var.shape());
      v_.emplace_back(p.var.shape());
    }
  }

  void set_lr(double lr) { lr_ = lr; }
  double lr() const { return lr_; }
  int64_t step_count() const { return t_; }

  void step() {
    ++t_;
    double bc1 = 1.0 - std::pow(b1_, double(t_));
    double bc2 = 1.0 - std::pow(b2_, double(t_));
    auto& params = ps_.params();
    for (size_t k = 0; k < params.size(); ++k) {
      auto& p = params[k].var;
      if (!p.has_grad()) continue;
      T* w = p.val().data();
      const T* g = p.grad().data();
      T* m = m_[k].data();
      T* v = v_[k].data();
      for (int64_t i = 0; i < p.numel(); ++i) {
        double gi = double(g[i]);
        double mi = b1_ * double(m[i]) + (1 - b1_) * gi;
        double vi = b2_ * double(v[i]) + (1 - b2_) * gi * gi;
        m[i] = T(mi);
        v[i] = T(vi);
        double update = (mi / bc1) / (std::sqrt(vi / bc2) + eps_);
        if (decoupled_ && wd_ > 0) update += wd_ * double(w[i]);
        w[i] = T(double(w[i]) - lr_ * update);
      }
    }
  }

  void zero_grad() { ps_.zero_grads(); }

 private:
  ParamStore<T>& ps_;
  double lr_, wd_;
  bool decoupled_;
  double b1_, b2_, eps_;
  int64_t t_ = 0;
  std::vector<Tensor<T>> m_, v_;
};

}  // namespace mcafu
