#pragma once

// Attention gating blocks and the residual double-convolution unit.

#include "mcafu/debug.hpp"
#include "mcafu/layers.hpp"

namespace mcafu {

/// Resamples to a square target resolution: power-of-two downsampling via
/// 2x2 max pooling, upsampling via bilinear x2 steps. Channels untouched.
template <typename T>
Var<T> align_to(const Var<T>& x, int64_t target) {
  check_rank4(x.shape(), "align_to");
  int64_t h = x.shape()[2], w = x.shape()[3];
  if (h != w) throw ShapeError("align_to: expected square feature map, got " + shape_str(x.shape()));
  if (h == target) return x;
  Var<T> y = x;
  if (h > target) {
    int64_t r = h;
    while (r > target) {
      if (r % 2 != 0) break;
      y = ops::max_pool2d(y, 2, 2, 0);
      r /= 2;
    }
    if (r != target)
      throw ShapeError("align_to: " + std::to_string(h) + " -> " + std::to_string(target) +
                       " is not a power-of-two reduction");
  } else {
    int64_t r = h;
    while (r < target) {
      y = ops::upsample_bilinear2x(y);
      r *= 2;
    }
    if (r != target)
      throw ShapeError("align_to: " + std::to_string(h) + " -> " + std::to_string(target) +
                       " is not a power-of-two magnification");
  }
  return y;
}

template <typename T>
std::pair<Var<T>, Var<T>> align_streams(const Var<T>& a, const Var<T>& b, int64_t target) {
  return {align_to(a, target), align_to(b, target)};
}

/// Attention gate: input x is scaled by a single-channel coefficient map
/// computed from x and the gating signal g (both already spatially aligned).
/// alpha = sigmoid(psi(relu(conv_x(x) + conv_g(g)))), all convs 1x1 + BN.
template <typename T>
struct AttentionGate {
  Conv2d<T> conv_x, conv_g, conv_psi;
  BatchNorm2d<T> bn_x, bn_g, bn_psi;
  int64_t f_int = 0;

  AttentionGate() = default;
  AttentionGate(ParamStore<T>& ps, const std::string& name, int64_t cx, int64_t cg, int64_t fint)
      : conv_x(ps, name + ".conv_x", cx, fint, 1, 1, 0, 1, /*bias=*/false),
        conv_g(ps, name + ".conv_g", cg, fint, 1, 1, 0, 1, /*bias=*/false),
        conv_psi(ps, name + ".psi", fint, 1, 1, 1, 0, 1, /*bias=*/false),
        bn_x(ps, name + ".bn_x", fint),
        bn_g(ps, name + ".bn_g", fint),
        bn_psi(ps, name + ".bn_psi", 1),
        f_int(fint) {}

  Var<T> forward(const Var<T>& g, const Var<T>& x, const Ctx& ctx) {
    if (g.shape()[2] != x.shape()[2] || g.shape()[3] != x.shape()[3])
      throw ShapeError("attention_gate: g " + shape_str(g.shape()) + " and x " +
                       shape_str(x.shape()) + " are not spatially aligned");
    auto ax = bn_x.forward(conv_x.forward(x), ctx);
    auto ag = bn_g.forward(conv_g.forward(g), ctx);
    auto s = ops::relu(ops::add(ax, ag));
    auto alpha = ops::sigmoid(bn_psi.forward(conv_psi.forward(s), ctx));
    auto y = ops::mul_gate_hw(x, alpha);
    debug_check_finite("attention_gate", y);
    return y;
  }
  int64_t expected_params() const {
    return conv_x.expected_params() + conv_g.expected_params() + conv_psi.expected_params() +
           bn_x.expected_params() + bn_g.expected_params() + bn_psi.expected_params();
  }
};

/// CBAM-style spatial attention: per-pixel gate from channel max/mean maps
/// through a 7x7 convolution.
template <typename T>
struct SpatialAttention {
  Conv2d<T> conv;

  SpatialAttention() = default;
  SpatialAttention(ParamStore<T>& ps, const std::string& name)
      : conv(ps, name + ".conv", 2, 1, 7, 1, 3, 1, /*bias=*/true) {}

  Var<T> forward(const Var<T>& f, const Ctx&) {
    auto mx = ops::channel_max(f);
    auto mn = ops::channel_mean(f);
    auto gate = ops::sigmoid(conv.forward(ops::concat_channels<T>({mx, mn})));
    auto y = ops::mul_gate_hw(f, gate);
    debug_check_finite("spatial_attention", y);
    return y;
  }
  int64_t expected_params() const { return conv.expected_params(); }
};

/// Squeeze-excitation channel attention.
template <typename T>
struct ChannelAttention {
  Linear<T> fc1, fc2;
  int64_t channels = 0, reduction = 16;

  ChannelAttention() = default;
  ChannelAttention(ParamStore<T>& ps, const std::string& name, int64_t c, int64_t reduction_)
      : channels(c), reduction(reduction_) {
    if (c < reduction_)
      throw std::invalid_argument("channel_attention: " + std::to_string(c) + " channels < reduction " +
                                  std::to_string(reduction_));
    if (c % reduction_ != 0)
      throw std::invalid_argument("channel_attention: channels not divisible by reduction");
    fc1 = Linear<T>(ps, name + ".fc1", c, c / reduction_);
    fc2 = Linear<T>(ps, name + ".fc2", c / reduction_, c);
  }

  Var<T> forward(const Var<T>& f, const Ctx&) {
    auto squeezed = ops::global_avg_pool(f);                       // (N,C)
    auto gate = ops::sigmoid(fc2.forward(ops::relu(fc1.forward(squeezed))));
    auto y = ops::mul_gate_c(f, gate);
    debug_check_finite("channel_attention", y);
    return y;
  }
  int64_t expected_params() const { return fc1.expected_params() + fc2.expected_params(); }
};

/// Co-attention gate: the two inputs gate each other through twin attention
/// gates; the concatenated result is channel-reweighted (unless this is the
/// decoder variant) and fused down to the stage width. The fusion convolution
/// is 3x3, which is what puts the model in the published complexity budget.
template <typename T>
struct CoAttentionGate {
  AttentionGate<T> ag_t;  // x gates t
  AttentionGate<T> ag_x;  // t gates x
  ChannelAttention<T> ca;
  ConvBnAct<T> fuse;
  bool use_ca = true;
  int64_t target = 0;  // output resolution

  CoAttentionGate() = default;
  CoAttentionGate(ParamStore<T>& ps, const std::string& name, int64_t cx, int64_t ct,
                  int64_t cout, int64_t target_, bool with_ca, int64_t ca_reduction)
      : ag_t(ps, name + ".ag_t", ct, cx, std::max<int64_t>(cout / 2, 8)),
        ag_x(ps, name + ".ag_x", cx, ct, std::max<int64_t>(cout / 2, 8)),
        fuse(ps, name + ".fuse", cx + ct, cout, 3, 1, 1),
        use_ca(with_ca),
        target(target_) {
    if (with_ca) ca = ChannelAttention<T>(ps, name + ".ca", cx + ct, ca_reduction);
  }

  Var<T> forward(const Var<T>& x, const Var<T>& t, const Ctx& ctx) {
    auto [xa, ta] = align_streams(x, t, target);
    auto gated_t = ag_t.forward(/*g=*/xa, /*x=*/ta, ctx);
    auto gated_x = ag_x.forward(/*g=*/ta, /*x=*/xa, ctx);
    auto cat = ops::concat_channels<T>({gated_t, gated_x});
    if (use_ca) cat = ca.forward(cat, ctx);
    auto y = fuse.forward(cat, ctx);
    debug_check_finite("co_attention_gate", y);
    return y;
  }
  int64_t expected_params() const {
    return ag_t.expected_params() + ag_x.expected_params() + fuse.expected_params() +
           (use_ca ? ca.expected_params() : 0);
  }
};

/// Ablation stand-in for CoAG/CoAG*: channel concatenation + 1x1 projection.
template <typename T>
struct ConcatProject {
  ConvBnAct<T> proj;
  int64_t target = 0;

  ConcatProject() = default;
  ConcatProject(ParamStore<T>& ps, const std::string& name, int64_t cx, int64_t ct, int64_t cout,
                int64_t target_)
      : proj(ps, name + ".proj", cx + ct, cout, 1, 1, 0), target(target_) {}

  Var<T> forward(const Var<T>& x, const Var<T>& t, const Ctx& ctx) {
    auto [xa, ta] = align_streams(x, t, target);
    return proj.forward(ops::concat_channels<T>({ta, xa}), ctx);
  }
  int64_t expected_params() const { return proj.expected_params(); }
};

/// Either a real co-attention gate or its concatenation ablation, chosen at
/// construction. Signature matches CoAG.
template <typename T>
struct PairFusion {
  CoAttentionGate<T> coag;
  ConcatProject<T> concat;
  bool use_coag = true;

  PairFusion() = default;
  PairFusion(ParamStore<T>& ps, const std::string& name, int64_t cx, int64_t ct, int64_t cout,
             int64_t target, bool with_ca, int64_t ca_reduction, bool use_coag_) {
    use_coag = use_coag_;
    if (use_coag)
      coag = CoAttentionGate<T>(ps, name, cx, ct, cout, target, with_ca, ca_reduction);
    else
      concat = ConcatProject<T>(ps, name, cx, ct, cout, target);
  }
  Var<T> forward(const Var<T>& x, const Var<T>& t, const Ctx& ctx) {
    return use_coag ? coag.forward(x, t, ctx) : concat.forward(x, t, ctx);
  }
  int64_t expected_params() const {
    return use_coag ? coag.expected_params() : concat.expected_params();
  }
};

/// Two 3x3 conv-BN-ReLU stages summed with a residual skip (1x1-projected
/// when the width changes). Serves as both DConvB and ResB.
template <typename T>
struct ResidualDoubleConv {
  ConvBnAct<T> c1, c2;
  Conv2d<T> skip_conv;
  BatchNorm2d<T> skip_bn;
  bool projected = false;

  ResidualDoubleConv() = default;
  ResidualDoubleConv(ParamStore<T>& ps, const std::string& name, int64_t cin, int64_t cout)
      : c1(ps, name + ".c1", cin, cout, 3, 1, 1), c2(ps, name + ".c2", cout, cout, 3, 1, 1) {
    if (cin != cout) {
      projected = true;
      skip_conv = Conv2d<T>(ps, name + ".skip.conv", cin, cout, 1, 1, 0, 1, /*bias=*/false);
      skip_bn = BatchNorm2d<T>(ps, name + ".skip.bn", cout);
    }
  }

  Var<T> forward(const Var<T>& x, const Ctx& ctx) {
    auto y = c2.forward(c1.forward(x, ctx), ctx);
    auto s = projected ? skip_bn.forward(skip_conv.forward(x), ctx) : x;
    auto out = ops::add(y, s);
    debug_check_finite("residual_double_conv", out);
    return out;
  }
  int64_t expected_params() const {
    return c1.expected_params() + c2.expected_params() +
           (projected ? skip_conv.expected_params() + skip_bn.expected_params() : 0);
  }
};

}  // namespace mcafu
