#pragma once

// Pyramidal feature extractors: an 18-layer residual CNN trunk and a
// PVTv2-family transformer trunk, each behind the same 4-stage interface.
// Tiny variants divide widths by 8 and use one block per stage.

#include "mcafu/config.hpp"
#include "mcafu/ssm.hpp"

namespace mcafu {

template <typename T>
using Pyramid = std::array<Var<T>, 4>;

// ---------------------------------------------------------------------------
// CNN branch
// ---------------------------------------------------------------------------

template <typename T>
struct BasicBlock {
  ConvBnAct<T> c1;
  Conv2d<T> c2;
  BatchNorm2d<T> bn2;
  Conv2d<T> down_conv;
  BatchNorm2d<T> down_bn;
  bool downsample = false;

  BasicBlock() = default;
  BasicBlock(ParamStore<T>& ps, const std::string& name, int64_t cin, int64_t cout, int64_t stride)
      : c1(ps, name + ".c1", cin, cout, 3, stride, 1),
        c2(ps, name + ".c2.conv", cout, cout, 3, 1, 1, 1, /*bias=*/false),
        bn2(ps, name + ".c2.bn", cout) {
    if (stride != 1 || cin != cout) {
      downsample = true;
      down_conv = Conv2d<T>(ps, name + ".down.conv", cin, cout, 1, stride, 0, 1, false);
      down_bn = BatchNorm2d<T>(ps, name + ".down.bn", cout);
    }
  }
  Var<T> forward(const Var<T>& x, const Ctx& ctx) {
    auto y = bn2.forward(c2.forward(c1.forward(x, ctx)), ctx);
    auto s = downsample ? down_bn.forward(down_conv.forward(x), ctx) : x;
    auto out = ops::relu(ops::add(y, s));
    complexity::add_macs("act", out.numel());
    return out;
  }
  int64_t expected_params() const {
    return c1.expected_params() + c2.expected_params() + bn2.expected_params() +
           (downsample ? down_conv.expected_params() + down_bn.expected_params() : 0);
  }
};

/// Residual classifier trunk. Taps: r_0 after the stem (input/2), r_1..r_3
/// after the first three stages. The full spec keeps the complete 18-layer
/// trunk (the final 512-wide stage exists but is not executed by the
/// pyramid); the tiny spec drops it so every parameter sees gradient.
template <typename T>
struct CnnPyramid {
  ConvBnAct<T> stem;
  std::vector<BasicBlock<T>> layer1, layer2, layer3, layer4;
  bool has_tail = false;

  CnnPyramid() = default;
  CnnPyramid(ParamStore<T>& ps, const std::string& name, const ModelConfig& cfg) {
    bool tiny = cfg.scale == BackboneScale::tiny;
    auto ch = cfg.cnn_channels();  // taps: {stem, l1, l2, l3}
    int64_t blocks = tiny ? 1 : 2;
    stem = ConvBnAct<T>(ps, name + ".stem", cfg.in_channels, ch[0], 7, 2, 3);
    auto make_layer = [&](std::vector<BasicBlock<T>>& layer, const std::string& lname, int64_t cin,
                          int64_t cout, int64_t stride) {
      layer.emplace_back(ps, lname + ".0", cin, cout, stride);
      for (int64_t i = 1; i < blocks; ++i) layer.emplace_back(ps, lname + "." + std::to_string(i), cout, cout, 1);
    };
    make_layer(layer1, name + ".layer1", ch[0], ch[1], 1);
    make_layer(layer2, name + ".layer2", ch[1], ch[2], 2);
    make_layer(layer3, name + ".layer3", ch[2], ch[3], 2);
    if (!tiny) {
      has_tail = true;
      make_layer(layer4, name + ".layer4", ch[3], ch[3] * 2, 2);
    }
  }

  Pyramid<T> forward(const Var<T>& image, const Ctx& ctx) {
    complexity::ScopeGuard scope("cnn");
    auto r0 = stem.forward(image, ctx);
    auto x = ops::max_pool2d(r0, 3, 2, 1);
    for (auto& b : layer1) x = b.forward(x, ctx);
    auto r1 = x;
    for (auto& b : layer2) x = b.forward(x, ctx);
    auto r2 = x;
    for (auto& b : layer3) x = b.forward(x, ctx);
    auto r3 = x;
    debug_check_finite("cnn_pyramid", r3);
    return {r0, r1, r2, r3};
  }
  int64_t expected_params() const {
    int64_t n = stem.expected_params();
    for (const auto& b : layer1) n += b.expected_params();
    for (const auto& b : layer2) n += b.expected_params();
    for (const auto& b : layer3) n += b.expected_params();
    for (const auto& b : layer4) n += b.expected_params();
    return n;
  }
};

// ---------------------------------------------------------------------------
// Transformer branch (PVTv2 family)
// ---------------------------------------------------------------------------

template <typename T>
struct OverlapPatchEmbed {
  Conv2d<T> proj;
  LayerNorm<T> norm;

  OverlapPatchEmbed() = default;
  OverlapPatchEmbed(ParamStore<T>& ps, const std::string& name, int64_t cin, int64_t dim,
                    int64_t k, int64_t stride)
      : proj(ps, name + ".proj", cin, dim, k, stride, k / 2, 1, true, Init::trunc_normal_002),
        norm(ps, name + ".norm", dim) {}

  // returns (B,L,dim) plus the new spatial extents
  std::tuple<Var<T>, int64_t, int64_t> forward(const Var<T>& x) {
    auto y = proj.forward(x);
    int64_t H = y.shape()[2], W = y.shape()[3];
    return {norm.forward(ops::nchw_to_nlc(y)), H, W};
  }
  int64_t expected_params() const { return proj.expected_params() + norm.expected_params(); }
};

/// Spatial-reduction attention. Standard mode shrinks K/V with a sr x sr
/// strided conv; linear mode pools to 7x7 + 1x1 conv + GELU.
template <typename T>
struct SRAttention {
  Linear<T> q, k, v, proj;
  Conv2d<T> sr;
  LayerNorm<T> sr_norm;
  int64_t dim = 0, heads = 1, sr_ratio = 1;
  bool linear_mode = false, has_sr = false;

  SRAttention() = default;
  SRAttention(ParamStore<T>& ps, const std::string& name, int64_t dim_, int64_t heads_,
              int64_t sr_ratio_, bool linear_)
      : dim(dim_), heads(heads_), sr_ratio(sr_ratio_), linear_mode(linear_) {
    q = Linear<T>(ps, name + ".q", dim, dim, true, Init::trunc_normal_002);
    k = Linear<T>(ps, name + ".k", dim, dim, true, Init::trunc_normal_002);
    v = Linear<T>(ps, name + ".v", dim, dim, true, Init::trunc_normal_002);
    proj = Linear<T>(ps, name + ".proj", dim, dim, true, Init::trunc_normal_002);
    if (linear_mode) {
      has_sr = true;
      sr = Conv2d<T>(ps, name + ".sr", dim, dim, 1, 1, 0, 1, true, Init::trunc_normal_002);
      sr_norm = LayerNorm<T>(ps, name + ".sr_norm", dim);
    } else if (sr_ratio > 1) {
      has_sr = true;
      sr = Conv2d<T>(ps, name + ".sr", dim, dim, sr_ratio, sr_ratio, 0, 1, true,
                     Init::trunc_normal_002);
      sr_norm = LayerNorm<T>(ps, name + ".sr_norm", dim);
    }
  }

  Var<T> forward(const Var<T>& x, int64_t H, int64_t W, const Ctx&) {
    auto qv = ops::split_heads(q.forward(x), heads);  // (B,h,L,dh)
    Var<T> kv_src = x;
    if (has_sr) {
      auto sp = ops::nlc_to_nchw(x, H, W);
      if (linear_mode) {
        sp = ops::adaptive_avg_pool2d(sp, std::min<int64_t>(7, H), std::min<int64_t>(7, W));
        sp = sr.forward(sp);
        kv_src = ops::gelu(sr_norm.forward(ops::nchw_to_nlc(sp)));
        complexity::add_macs("act", kv_src.numel());
      } else {
        sp = sr.forward(sp);
        kv_src = sr_norm.forward(ops::nchw_to_nlc(sp));
      }
    }
    auto kvk = ops::split_heads(k.forward(kv_src), heads);
    auto kvv = ops::split_heads(v.forward(kv_src), heads);
    double scl = 1.0 / std::sqrt(double(dim / heads));
    auto attn = ops::softmax_lastdim(ops::scale(ops::matmul_bh(qv, kvk, /*trans_b=*/true), scl));
    auto out = ops::merge_heads(ops::matmul_bh(attn, kvv, false));
    return proj.forward(out);
  }
  int64_t expected_params() const {
    return q.expected_params() + k.expected_params() + v.expected_params() +
           proj.expected_params() + (has_sr ? sr.expected_params() + sr_norm.expected_params() : 0);
  }
};

/// PVTv2 feed-forward: fc1 -> depthwise 3x3 -> GELU -> fc2 (an extra ReLU
/// precedes the depthwise conv in linear mode).
template <typename T>
struct MixFfn {
  Linear<T> fc1, fc2;
  Conv2d<T> dwconv;
  bool linear_mode = false;
  int64_t hidden = 0;

  MixFfn() = default;
  MixFfn(ParamStore<T>& ps, const std::string& name, int64_t dim, int64_t hidden_, bool linear_)
      : linear_mode(linear_), hidden(hidden_) {
    fc1 = Linear<T>(ps, name + ".fc1", dim, hidden, true, Init::trunc_normal_002);
    dwconv = Conv2d<T>(ps, name + ".dwconv", hidden, hidden, 3, 1, 1, hidden, true);
    fc2 = Linear<T>(ps, name + ".fc2", hidden, dim, true, Init::trunc_normal_002);
  }
  Var<T> forward(const Var<T>& x, int64_t H, int64_t W, const Ctx&) {
    auto h = fc1.forward(x);
    if (linear_mode) {
      h = ops::relu(h);
      complexity::add_macs("act", h.numel());
    }
    auto sp = dwconv.forward(ops::nlc_to_nchw(h, H, W));
    h = ops::gelu(ops::nchw_to_nlc(sp));
    complexity::add_macs("act", h.numel());
    return fc2.forward(h);
  }
  int64_t expected_params() const {
    return fc1.expected_params() + fc2.expected_params() + dwconv.expected_params();
  }
};

template <typename T>
struct PvtBlock {
  LayerNorm<T> norm1, norm2;
  SRAttention<T> attn;
  MixFfn<T> ffn;

  PvtBlock() = default;
  PvtBlock(ParamStore<T>& ps, const std::string& name, int64_t dim, int64_t heads,
           int64_t mlp_ratio, int64_t sr_ratio, bool linear_)
      : norm1(ps, name + ".norm1", dim),
        norm2(ps, name + ".norm2", dim),
        attn(ps, name + ".attn", dim, heads, sr_ratio, linear_),
        ffn(ps, name + ".ffn", dim, dim * mlp_ratio, linear_) {}
  Var<T> forward(const Var<T>& x, int64_t H, int64_t W, const Ctx& ctx) {
    auto y = ops::add(x, attn.forward(norm1.forward(x), H, W, ctx));
    return ops::add(y, ffn.forward(norm2.forward(y), H, W, ctx));
  }
  int64_t expected_params() const {
    return norm1.expected_params() + norm2.expected_params() + attn.expected_params() +
           ffn.expected_params();
  }
};

template <typename T>
struct PvtStage {
  OverlapPatchEmbed<T> embed;
  std::vector<PvtBlock<T>> blocks;
  LayerNorm<T> norm;

  PvtStage() = default;
  PvtStage(ParamStore<T>& ps, const std::string& name, int64_t cin, int64_t dim, int64_t patch_k,
           int64_t patch_stride, int64_t depth, int64_t heads, int64_t mlp_ratio, int64_t sr_ratio,
           bool linear_)
      : embed(ps, name + ".embed", cin, dim, patch_k, patch_stride), norm(ps, name + ".norm", dim) {
    for (int64_t i = 0; i < depth; ++i)
      blocks.emplace_back(ps, name + ".block" + std::to_string(i), dim, heads, mlp_ratio, sr_ratio,
                          linear_);
  }
  Var<T> forward(const Var<T>& x, const Ctx& ctx) {  // NCHW in, NCHW out
    auto [seq, H, W] = embed.forward(x);
    for (auto& b : blocks) seq = b.forward(seq, H, W, ctx);
    return ops::nlc_to_nchw(norm.forward(seq), H, W);
  }
  int64_t expected_params() const {
    int64_t n = embed.expected_params() + norm.expected_params();
    for (const auto& b : blocks) n += b.expected_params();
    return n;
  }
};

/// PVTv2-family trunk: V1 = B2-linear (depths 3,4,6,3; pooled-key attention),
/// V0 = B0 (depths 2,2,2,2; strided-conv reduction), tiny = B2-linear widths/8
/// at one block per stage.
template <typename T>
struct TransformerPyramid {
  std::array<PvtStage<T>, 4> stages;

  TransformerPyramid() = default;
  TransformerPyramid(ParamStore<T>& ps, const std::string& name, const ModelConfig& cfg) {
    auto dims = cfg.transformer_channels();
    bool tiny = cfg.scale == BackboneScale::tiny;
    bool linear_mode = tiny || cfg.variant == Variant::V1;
    std::array<int64_t, 4> depths;
    if (tiny) depths = {1, 1, 1, 1};
    else if (cfg.variant == Variant::V1) depths = {3, 4, 6, 3};
    else depths = {2, 2, 2, 2};
    std::array<int64_t, 4> heads = {1, 2, 5, 8};
    std::array<int64_t, 4> mlp = {8, 8, 4, 4};
    std::array<int64_t, 4> sr = {8, 4, 2, 1};
    int64_t cin = cfg.in_channels;
    for (int i = 0; i < 4; ++i) {
      stages[i] = PvtStage<T>(ps, name + ".stage" + std::to_string(i), cin, dims[i],
                              i == 0 ? 7 : 3, i == 0 ? 4 : 2, depths[i], heads[i], mlp[i], sr[i],
                              linear_mode);
      cin = dims[i];
    }
  }

  Pyramid<T> forward(const Var<T>& image, const Ctx& ctx) {
    complexity::ScopeGuard scope("transformer");
    Pyramid<T> out;
    Var<T> x = image;
    for (int i = 0; i < 4; ++i) {
      x = stages[i].forward(x, ctx);
      out[i] = x;
    }
    debug_check_finite("transformer_pyramid", out[3]);
    return out;
  }
  int64_t expected_params() const {
    int64_t n = 0;
    for (const auto& s : stages) n += s.expected_params();
    return n;
  }
};

}  // namespace mcafu
