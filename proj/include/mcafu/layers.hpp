#pragma once

// Parameter bookkeeping and thin layer wrappers over the op library.
// Every parameter is seeded from (global seed, name) so initialization does
// not depend on construction order, and ablation variants share weights for
// the blocks they have in common.

#include <functional>
#include <map>
#include <set>

#include "mcafu/nn_ops.hpp"
#include "mcafu/rng.hpp"

namespace mcafu {

enum class Init {
  zeros,
  ones,
  kaiming_normal_fan_out,  // conv weights (ResNet convention)
  kaiming_uniform_fan_in,  // linear weights (PyTorch default)
  uniform_fan_in,          // biases paired with kaiming_uniform_fan_in
  trunc_normal_002,        // transformer weights
  constant,
};

struct Ctx {
  bool training = false;
  // Optional per-stage statistics sink: (name, shape, min, max, mean).
  std::function<void(const std::string&, const Shape&, double, double, double)> diag;
};

template <typename T>
class ParamStore {
 public:
  struct Entry {
    std::string name;
    Var<T> var;
  };
  struct BufEntry {
    std::string name;
    Tensor<T> tensor;  // shared-buffer handle
  };

  explicit ParamStore(uint64_t seed) : seed_(seed) {}

  Var<T> param(const std::string& name, Shape shape, Init init, double arg = 0.0) {
    Tensor<T> t{shape};
    Rng rng(mix_seed(seed_, hash_name(name)));
    initialize(t, init, arg, rng);
    Var<T> v{std::move(t), /*requires_grad=*/true};
    if (names_.count(name)) throw std::runtime_error("duplicate parameter name: " + name);
    names_.insert(name);
    params_.push_back({name, v});
    return v;
  }

  Tensor<T> buffer(const std::string& name, Shape shape, T fill) {
    Tensor<T> t{std::move(shape), fill};
    if (names_.count(name)) throw std::runtime_error("duplicate buffer name: " + name);
    names_.insert(name);
    buffers_.push_back({name, t});
    return t;  // shared handle
  }

  std::vector<Entry>& params() { return params_; }
  const std::vector<Entry>& params() const { return params_; }
  std::vector<BufEntry>& buffers() { return buffers_; }
  const std::vector<BufEntry>& buffers() const { return buffers_; }

  int64_t param_count() const {
    int64_t n = 0;
    for (const auto& e : params_) n += e.var.numel();
    return n;
  }

  void zero_grads() {
    for (auto& e : params_) e.var.zero_grad();
  }

  uint64_t seed() const { return seed_; }

 private:
  static void initialize(Tensor<T>& t, Init init, double arg, Rng& rng) {
    switch (init) {
      case Init::zeros: t.fill(T(0)); break;
      case Init::ones: t.fill(T(1)); break;
      case Init::constant: t.fill(T(arg)); break;
      case Init::kaiming_normal_fan_out: {
        // fan_out of a conv weight (Cout,Cin,kh,kw) = Cout*kh*kw... fan over
        // receptive field times output channels.
        const auto& s = t.shape();
        double fan_out = double(s[0]);
        for (size_t i = 2; i < s.size(); ++i) fan_out *= double(s[i]);
        double std = std::sqrt(2.0 / fan_out);
        rng.fill_normal(t, 0.0, std);
        break;
      }
      case Init::kaiming_uniform_fan_in: {
        const auto& s = t.shape();
        double fan_in = 1;
        for (size_t i = 1; i < s.size(); ++i) fan_in *= double(s[i]);
        double bound = 1.0 / std::sqrt(fan_in);
        rng.fill_uniform(t, -bound, bound);
        break;
      }
      case Init::uniform_fan_in: {
        double bound = arg > 0 ? 1.0 / std::sqrt(arg) : 0.0;
        rng.fill_uniform(t, -bound, bound);
        break;
      }
      case Init::trunc_normal_002: {
        for (int64_t i = 0; i < t.numel(); ++i) {
          double v;
          do { v = rng.normal(0.0, 0.02); } while (std::abs(v) > 0.04);
          t[i] = T(v);
        }
        break;
      }
    }
  }

  uint64_t seed_;
  std::vector<Entry> params_;
  std::vector<BufEntry> buffers_;
  std::set<std::string> names_;
};

// ---------------------------------------------------------------------------

template <typename T>
struct Conv2d {
  Var<T> w, b;
  int64_t stride = 1, pad = 0, groups = 1;

  Conv2d() = default;
  Conv2d(ParamStore<T>& ps, const std::string& name, int64_t cin, int64_t cout, int64_t k,
         int64_t stride_, int64_t pad_, int64_t groups_ = 1, bool bias = true,
         Init init = Init::kaiming_normal_fan_out)
      : stride(stride_), pad(pad_), groups(groups_) {
    w = ps.param(name + ".weight", {cout, cin / groups_, k, k}, init);
    if (bias) {
      double fan_in = double(cin / groups_) * k * k;
      b = ps.param(name + ".bias", {cout},
                   init == Init::kaiming_normal_fan_out ? Init::zeros : Init::uniform_fan_in,
                   fan_in);
    }
  }
  Var<T> forward(const Var<T>& x) const { return ops::conv2d(x, w, b, stride, pad, groups); }
  int64_t expected_params() const { return w.numel() + (b.defined() ? b.numel() : 0); }
};

template <typename T>
struct BatchNorm2d {
  Var<T> gamma, beta;
  Tensor<T> running_mean, running_var;
  double momentum = 0.1, eps = 1e-5;

  BatchNorm2d() = default;
  BatchNorm2d(ParamStore<T>& ps, const std::string& name, int64_t c) {
    gamma = ps.param(name + ".weight", {c}, Init::ones);
    beta = ps.param(name + ".bias", {c}, Init::zeros);
    running_mean = ps.buffer(name + ".running_mean", {c}, T(0));
    running_var = ps.buffer(name + ".running_var", {c}, T(1));
  }
  Var<T> forward(const Var<T>& x, const Ctx& ctx) {
    return ops::batch_norm2d(x, gamma, beta, running_mean, running_var, ctx.training, momentum,
                             eps);
  }
  int64_t expected_params() const { return gamma.numel() + beta.numel(); }
};

template <typename T>
struct LayerNorm {
  Var<T> gamma, beta;
  double eps = 1e-5;

  LayerNorm() = default;
  LayerNorm(ParamStore<T>& ps, const std::string& name, int64_t c) {
    gamma = ps.param(name + ".weight", {c}, Init::ones);
    beta = ps.param(name + ".bias", {c}, Init::zeros);
  }
  Var<T> forward(const Var<T>& x) const { return ops::layer_norm_lastdim(x, gamma, beta, eps); }
  Var<T> forward_nchw(const Var<T>& x) const {
    return ops::layer_norm_channels(x, gamma, beta, eps);
  }
  int64_t expected_params() const { return gamma.numel() + beta.numel(); }
};

template <typename T>
struct Linear {
  Var<T> w, b;

  Linear() = default;
  Linear(ParamStore<T>& ps, const std::string& name, int64_t in, int64_t out, bool bias = true,
         Init init = Init::kaiming_uniform_fan_in) {
    w = ps.param(name + ".weight", {out, in}, init);
    if (bias) b = ps.param(name + ".bias", {out}, Init::uniform_fan_in, double(in));
  }
  Var<T> forward(const Var<T>& x) const { return ops::linear(x, w, b); }
  int64_t expected_params() const { return w.numel() + (b.defined() ? b.numel() : 0); }
};

/// conv -> BN -> optional ReLU, the ubiquitous unit.
template <typename T>
struct ConvBnAct {
  Conv2d<T> conv;
  BatchNorm2d<T> bn;
  bool act = true;

  ConvBnAct() = default;
  ConvBnAct(ParamStore<T>& ps, const std::string& name, int64_t cin, int64_t cout, int64_t k,
            int64_t stride, int64_t pad, bool act_ = true)
      : conv(ps, name + ".conv", cin, cout, k, stride, pad, 1, /*bias=*/false),
        bn(ps, name + ".bn", cout),
        act(act_) {}
  Var<T> forward(const Var<T>& x, const Ctx& ctx) {
    auto y = bn.forward(conv.forward(x), ctx);
    if (act) {
      y = ops::relu(y);
      complexity::add_macs("act", y.numel());
    }
    return y;
  }
  int64_t expected_params() const { return conv.expected_params() + bn.expected_params(); }
};

}  // namespace mcafu
