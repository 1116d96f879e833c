#pragma once

// The full segmentation network: three-branch encoder (CNN + transformer
// pyramids fused through the attention/scan stages), bottleneck, co-attention
// decoder, segmentation head. Ablation flags swap blocks for their plain
// counterparts at construction time.

#include "mcafu/backbones.hpp"

namespace mcafu {

template <typename T>
struct EncoderOutputs {
  Var<T> x0, x1, x2, x3, x4, x5;
  Var<T> coamamba_pre;  // bottleneck output before the average pool
  Pyramid<T> t, r;
};

/// One fusion stage: CoAG(t,x) gated by spatially-attended CNN features,
/// then MambaConv. Ablations: no CNN gate, concat fusion, plain double conv,
/// or the whole stage replaced by concat + projection + double conv.
template <typename T>
struct FusionStage {
  PairFusion<T> fuse;          // CoAG or concat+proj (use_coag)
  SpatialAttention<T> sa;
  AttentionGate<T> ag;
  MambaConv<T> mamba;
  // use_coasmamba=false path:
  ConvBnAct<T> simple_proj;
  ResidualDoubleConv<T> simple_conv;

  bool structured = true;    // use_coasmamba
  bool with_cnn_gate = true; // use_resnet_branch
  int64_t target = 0;

  FusionStage() = default;
  FusionStage(ParamStore<T>& ps, const std::string& name, int64_t cx, int64_t ct, int64_t cr,
              int64_t cout, int64_t target_, const ModelConfig& cfg)
      : structured(cfg.ablation.use_coasmamba),
        with_cnn_gate(cfg.ablation.use_resnet_branch),
        target(target_) {
    if (structured) {
      fuse = PairFusion<T>(ps, name + ".coag", cx, ct, cout, target_, /*with_ca=*/true,
                           cfg.ca_reduction, cfg.ablation.use_coag);
      if (with_cnn_gate) {
        sa = SpatialAttention<T>(ps, name + ".sa");
        ag = AttentionGate<T>(ps, name + ".ag", cout, cr, std::max<int64_t>(cout / 2, 8));
      }
      mamba = MambaConv<T>(ps, name + ".mambaconv", cout, cout, cfg.ssm_state_dim,
                           cfg.ablation.use_mambaconv);
    } else {
      int64_t cat = cx + ct + (with_cnn_gate ? cr : 0);
      simple_proj = ConvBnAct<T>(ps, name + ".proj", cat, cout, 1, 1, 0);
      simple_conv = ResidualDoubleConv<T>(ps, name + ".conv", cout, cout);
    }
  }

  Var<T> forward(const Var<T>& t, const Var<T>& x, const Var<T>& r, const Ctx& ctx) {
    if (structured) {
      auto y = fuse.forward(x, t, ctx);
      if (with_cnn_gate) {
        if (r.shape()[2] != target)
          throw ShapeError("fusion stage: CNN feature resolution " +
                           std::to_string(r.shape()[2]) + " != stage target " +
                           std::to_string(target));
        auto gate = sa.forward(r, ctx);
        y = ag.forward(/*g=*/gate, /*x=*/y, ctx);
      }
      return mamba.forward(y, ctx);
    }
    std::vector<Var<T>> parts = {align_to(t, target), align_to(x, target)};
    if (with_cnn_gate) parts.push_back(align_to(r, target));
    auto y = simple_proj.forward(ops::concat_channels<T>(parts), ctx);
    return simple_conv.forward(y, ctx);
  }
  int64_t expected_params() const {
    if (structured)
      return fuse.expected_params() + mamba.expected_params() +
             (with_cnn_gate ? sa.expected_params() + ag.expected_params() : 0);
    return simple_proj.expected_params() + simple_conv.expected_params();
  }
};

/// Bottleneck: AAP(MambaConv(CoAG(x_3, x_4))); x_3 keeps its resolution,
/// x_4 is upsampled to it, the pool halves back down.
template <typename T>
struct Bottleneck {
  PairFusion<T> coag;
  MambaConv<T> mamba;
  bool enabled = true;
  int64_t target = 0, pool_to = 0;

  Bottleneck() = default;
  Bottleneck(ParamStore<T>& ps, const std::string& name, int64_t c3, int64_t c4, int64_t target_,
             int64_t pool_to_, const ModelConfig& cfg)
      : enabled(cfg.ablation.use_coamamba), target(target_), pool_to(pool_to_) {
    if (!enabled) return;
    coag = PairFusion<T>(ps, name + ".coag", c3, c4, c4, target_, /*with_ca=*/true,
                         cfg.ca_reduction, cfg.ablation.use_coag);
    mamba = MambaConv<T>(ps, name + ".mambaconv", c4, c4, cfg.ssm_state_dim,
                         cfg.ablation.use_mambaconv);
  }

  /// Returns (pre-pool features, pooled x_5).
  std::pair<Var<T>, Var<T>> forward(const Var<T>& x3, const Var<T>& x4, const Ctx& ctx) {
    if (!enabled) return {x4, x4};
    auto fused = coag.forward(x3, x4, ctx);
    auto pre = mamba.forward(fused, ctx);
    auto x5 = ops::adaptive_avg_pool2d(pre, pool_to, pool_to);
    return {pre, x5};
  }
  int64_t expected_params() const {
    return enabled ? coag.expected_params() + mamba.expected_params() : 0;
  }
};

/// Decoder block: two chained co-attention gates (skips first, then the
/// decoder stream) followed by a double convolution.
template <typename T>
struct DoubleLCoA {
  PairFusion<T> coag_skip, coag_dec;
  ResidualDoubleConv<T> dconv;
  ConvBnAct<T> cat_proj;  // use_doublelcoa=false path
  bool structured = true;
  int64_t target = 0;

  DoubleLCoA() = default;
  DoubleLCoA(ParamStore<T>& ps, const std::string& name, int64_t c_lo, int64_t c_hi, int64_t c_d,
             int64_t cout, int64_t target_, const ModelConfig& cfg)
      : structured(cfg.ablation.use_doublelcoa), target(target_) {
    if (structured) {
      coag_skip = PairFusion<T>(ps, name + ".coag_skip", c_lo, c_hi, cout, target_,
                                /*with_ca=*/false, cfg.ca_reduction, cfg.ablation.use_coag);
      coag_dec = PairFusion<T>(ps, name + ".coag_dec", cout, c_d, cout, target_,
                               /*with_ca=*/false, cfg.ca_reduction, cfg.ablation.use_coag);
      dconv = ResidualDoubleConv<T>(ps, name + ".dconvb", cout, cout);
    } else {
      cat_proj = ConvBnAct<T>(ps, name + ".proj", c_lo + c_hi + c_d, cout, 1, 1, 0);
      dconv = ResidualDoubleConv<T>(ps, name + ".dconvb", cout, cout);
    }
  }

  Var<T> forward(const Var<T>& skip_lo, const Var<T>& skip_hi, const Var<T>& d, const Ctx& ctx) {
    if (structured) {
      auto s = coag_skip.forward(skip_lo, skip_hi, ctx);
      auto fused = coag_dec.forward(s, d, ctx);
      return dconv.forward(fused, ctx);
    }
    auto cat = ops::concat_channels<T>(
        {align_to(skip_lo, target), align_to(skip_hi, target), align_to(d, target)});
    return dconv.forward(cat_proj.forward(cat, ctx), ctx);
  }
  int64_t expected_params() const {
    int64_t n = dconv.expected_params();
    if (structured) n += coag_skip.expected_params() + coag_dec.expected_params();
    else n += cat_proj.expected_params();
    return n;
  }
};

template <typename T>
class MambaCafuNet {
 public:
  explicit MambaCafuNet(const ModelConfig& cfg)
      : cfg_(cfg), params_(cfg.seed) {
    auto v = validate_config(cfg);
    if (!v.ok()) throw ConfigError("invalid model config: " + v.joined());
    int64_t s = cfg.input_size;
    auto t = cfg.transformer_channels();
    auto r = cfg.cnn_channels();
    const auto& x = cfg.stage_channels;

    stem_ = ResidualDoubleConv<T>(params_, "stem.dconvb", cfg.in_channels, cfg.stem_channels);
    transformer_ = TransformerPyramid<T>(params_, "transformer", cfg);
    if (cfg.ablation.use_resnet_branch) cnn_ = CnnPyramid<T>(params_, "cnn", cfg);

    std::array<int64_t, 5> xin = {cfg.stem_channels, x[0], x[1], x[2], x[3]};
    for (int i = 0; i < 4; ++i) {
      int64_t target = s / (2 << i);
      stages_[i] = FusionStage<T>(params_, "encoder.stage" + std::to_string(i + 1), xin[i], t[i],
                                  r[i], xin[i + 1], target, cfg);
    }
    bottleneck_ = Bottleneck<T>(params_, "bottleneck", x[2], x[3], s / 8, s / 16, cfg);

    // decoder: (skip_lo, skip_hi, d) -> stage outputs [x3, x2, x1, stem] wide
    std::array<int64_t, 4> lo_ch = {x[2], x[1], x[0], cfg.stem_channels};
    std::array<int64_t, 4> hi_ch = {x[3], x[2], x[1], x[0]};
    std::array<int64_t, 4> d_ch = {x[3], x[2], x[1], x[0]};
    for (int i = 0; i < 4; ++i) {
      int64_t target = s / (8 >> i);
      decoder_[i] = DoubleLCoA<T>(params_, "decoder.stage" + std::to_string(i + 1), lo_ch[i],
                                  hi_ch[i], d_ch[i], lo_ch[i], target, cfg);
    }
    head_ = Conv2d<T>(params_, "head.conv", cfg.stem_channels, cfg.num_classes, 1, 1, 0, 1, true);
  }

  MambaCafuNet(const MambaCafuNet&) = delete;
  MambaCafuNet& operator=(const MambaCafuNet&) = delete;

  EncoderOutputs<T> encode(const Var<T>& image, const Ctx& ctx) {
    check_image(image);
    EncoderOutputs<T> out;
    {
      complexity::ScopeGuard scope("stem");
      out.x0 = stem_.forward(image, ctx);
    }
    diag(ctx, "x_0", out.x0);
    out.t = transformer_.forward(image, ctx);
    if (cnn_.has_value()) out.r = cnn_->forward(image, ctx);
    for (int i = 0; i < 4; ++i) {
      diag(ctx, "t_" + std::to_string(i), out.t[i]);
      if (cnn_.has_value()) diag(ctx, "r_" + std::to_string(i), out.r[i]);
    }
    std::array<Var<T>*, 5> xs = {&out.x0, &out.x1, &out.x2, &out.x3, &out.x4};
    for (int i = 0; i < 4; ++i) {
      complexity::ScopeGuard scope("encoder.stage" + std::to_string(i + 1));
      try {
        Var<T> r = cnn_.has_value() ? out.r[i] : Var<T>();
        *xs[i + 1] = stages_[i].forward(out.t[i], *xs[i], r, ctx);
      } catch (const ShapeError& e) {
        throw ShapeError("encoder stage " + std::to_string(i + 1) + ": " + e.what());
      }
      diag(ctx, "x_" + std::to_string(i + 1), *xs[i + 1]);
    }
    {
      complexity::ScopeGuard scope("bottleneck");
      try {
        auto [pre, x5] = bottleneck_.forward(out.x3, out.x4, ctx);
        out.coamamba_pre = pre;
        out.x5 = x5;
      } catch (const ShapeError& e) {
        throw ShapeError(std::string("bottleneck: ") + e.what());
      }
    }
    diag(ctx, "x_5", out.x5);
    return out;
  }

  Var<T> forward(const Var<T>& image, const Ctx& ctx) {
    auto enc = encode(image, ctx);
    return decode(enc, ctx);
  }

  Var<T> decode(const EncoderOutputs<T>& enc, const Ctx& ctx) {
    std::array<const Var<T>*, 4> lo = {&enc.x3, &enc.x2, &enc.x1, &enc.x0};
    std::array<const Var<T>*, 4> hi = {&enc.x4, &enc.x3, &enc.x2, &enc.x1};
    Var<T> d = enc.x5;
    for (int i = 0; i < 4; ++i) {
      complexity::ScopeGuard scope("decoder.stage" + std::to_string(i + 1));
      d = ops::upsample_bilinear2x(d);
      diag(ctx, "d_" + std::to_string(4 - i), d);
      try {
        d = decoder_[i].forward(*lo[i], *hi[i], d, ctx);
      } catch (const ShapeError& e) {
        throw ShapeError("decoder stage " + std::to_string(i + 1) + ": " + e.what());
      }
      diag(ctx, i == 3 ? "d_0" : "dl_" + std::to_string(i + 1), d);
    }
    Var<T> logits;
    {
      complexity::ScopeGuard scope("head");
      logits = head_.forward(d);
    }
    diag(ctx, "logits", logits);
    debug_check_finite("forward", logits);
    return logits;
  }

  ParamStore<T>& params() { return params_; }
  const ParamStore<T>& params() const { return params_; }
  const ModelConfig& config() const { return cfg_; }

  int64_t expected_param_count() const {
    int64_t n = stem_.expected_params() + transformer_.expected_params() +
                (cnn_.has_value() ? cnn_->expected_params() : 0) + bottleneck_.expected_params() +
                head_.expected_params();
    for (const auto& st : stages_) n += st.expected_params();
    for (const auto& d : decoder_) n += d.expected_params();
    return n;
  }

 private:
  void check_image(const Var<T>& image) const {
    check_rank4(image.shape(), "forward");
    if (image.shape()[1] != cfg_.in_channels || image.shape()[2] != cfg_.input_size ||
        image.shape()[3] != cfg_.input_size)
      throw ShapeError("forward: image " + shape_str(image.shape()) + " does not match config (" +
                       std::to_string(cfg_.in_channels) + "," + std::to_string(cfg_.input_size) +
                       "," + std::to_string(cfg_.input_size) + ")");
  }
  void diag(const Ctx& ctx, const std::string& name, const Var<T>& v) const {
    if (!ctx.diag) return;
    const auto& t = v.val();
    double mn = t[0], mx = t[0], mean = 0;
    for (int64_t i = 0; i < t.numel(); ++i) {
      double x = double(t[i]);
      mn = std::min(mn, x);
      mx = std::max(mx, x);
      mean += x;
    }
    ctx.diag(name, t.shape(), mn, mx, mean / double(t.numel()));
  }

  ModelConfig cfg_;
  ParamStore<T> params_;
  ResidualDoubleConv<T> stem_;
  TransformerPyramid<T> transformer_;
  std::optional<CnnPyramid<T>> cnn_;
  std::array<FusionStage<T>, 4> stages_;
  Bottleneck<T> bottleneck_;
  std::array<DoubleLCoA<T>, 4> decoder_;
  Conv2d<T> head_;
};

}  // namespace mcafu
