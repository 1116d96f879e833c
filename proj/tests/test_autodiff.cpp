#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "gradcheck.hpp"
#include "mcafu/layers.hpp"
#include "mcafu/loss_ops.hpp"
#include "mcafu/rng.hpp"
#include "mcafu/scan.hpp"

using namespace mcafu;
namespace O = mcafu::ops;

namespace {

template <typename T>
Var<T> rand_var(Rng& rng, Shape s, double lo = -1.0, double hi = 1.0) {
  Tensor<T> t{s};
  rng.fill_uniform(t, lo, hi);
  return Var<T>(std::move(t), true);
}

constexpr double kTol = 1e-4;

}  // namespace

TEST_CASE("elementwise composite gradients match finite differences") {
  Rng rng(7);
  auto x = rand_var<double>(rng, {2, 3, 4, 4});
  auto y = rand_var<double>(rng, {2, 3, 4, 4});
  auto f = [&] {
    auto a = O::mul(O::sigmoid(x), O::softplus(y));
    auto b = O::add(O::gelu(x), O::scale(y, 0.5));
    return O::mean_all(O::mul(a, b));
  };
  auto res = testing::grad_check<double>(f, {{"x", x}, {"y", y}});
  CHECK(res.max_rel_err < kTol);
}

TEST_CASE("relu gradient away from the kink") {
  Rng rng(11);
  Tensor<double> t{{2, 2, 3, 3}};
  rng.fill_uniform(t, 0.2, 1.0);
  for (int64_t i = 0; i < t.numel(); i += 2) t[i] = -t[i];
  Var<double> x{t, true};
  auto f = [&] { return O::mean_all(O::relu(x)); };
  auto res = testing::grad_check<double>(f, {{"x", x}});
  CHECK(res.max_rel_err < kTol);
}

TEST_CASE("linear and matmul gradients") {
  Rng rng(13);
  auto x = rand_var<double>(rng, {2, 5, 6});
  auto w = rand_var<double>(rng, {4, 6});
  auto b = rand_var<double>(rng, {4});
  auto q = rand_var<double>(rng, {2, 2, 3, 4});
  auto k = rand_var<double>(rng, {2, 2, 5, 4});
  auto f = [&] {
    auto h = O::linear(x, w, b);                    // (2,5,4)
    auto hh = O::reshape(h, {2, 2, 5, 2});          // reshaped batch-head view
    auto attn = O::matmul_bh(q, k, /*trans_b=*/true);  // (2,2,3,5)
    auto sm = O::softmax_lastdim(attn);
    auto out = O::matmul_bh(sm, hh, false);         // (2,2,3,2)
    return O::mean_all(O::mul(out, out));
  };
  auto res = testing::grad_check<double>(f, {{"x", x}, {"w", w}, {"b", b}, {"q", q}, {"k", k}});
  CHECK(res.max_rel_err < kTol);
}

TEST_CASE("conv2d gradients incl. stride, padding and groups") {
  Rng rng(17);
  auto x = rand_var<double>(rng, {2, 4, 6, 6});
  auto w = rand_var<double>(rng, {6, 2, 3, 3});  // groups=2
  auto b = rand_var<double>(rng, {6});
  auto f = [&] {
    auto y = O::conv2d(x, w, b, /*stride=*/2, /*pad=*/1, /*groups=*/2);
    return O::mean_all(O::mul(y, y));
  };
  auto res = testing::grad_check<double>(f, {{"x", x}, {"w", w}, {"b", b}});
  CHECK(res.max_rel_err < kTol);
}

TEST_CASE("batch norm training-mode gradients") {
  Rng rng(19);
  auto x = rand_var<double>(rng, {3, 4, 3, 3});
  auto gamma = rand_var<double>(rng, {4}, 0.5, 1.5);
  auto beta = rand_var<double>(rng, {4}, -0.2, 0.2);
  auto f = [&] {
    Tensor<double> rm{{4}}, rv{{4}, 1.0};
    auto y = O::batch_norm2d(x, gamma, beta, rm, rv, /*training=*/true);
    return O::mean_all(O::mul(y, y));
  };
  auto res = testing::grad_check<double>(f, {{"x", x}, {"gamma", gamma}, {"beta", beta}});
  CHECK(res.max_rel_err < kTol);
}

TEST_CASE("layer norm gradients (lastdim and channelwise)") {
  Rng rng(23);
  auto x = rand_var<double>(rng, {2, 5, 6});
  auto g = rand_var<double>(rng, {6}, 0.5, 1.5);
  auto b = rand_var<double>(rng, {6}, -0.3, 0.3);
  auto f1 = [&] { return O::mean_all(O::mul(O::layer_norm_lastdim(x, g, b), x)); };
  CHECK(testing::grad_check<double>(f1, {{"x", x}, {"g", g}, {"b", b}}).max_rel_err < kTol);

  auto xc = rand_var<double>(rng, {2, 6, 3, 3});
  auto f2 = [&] { return O::mean_all(O::mul(O::layer_norm_channels(xc, g, b), xc)); };
  CHECK(testing::grad_check<double>(f2, {{"x", xc}, {"g", g}, {"b", b}}).max_rel_err < kTol);
}

TEST_CASE("pooling and resize gradients") {
  Rng rng(29);
  auto x = rand_var<double>(rng, {2, 3, 6, 6});
  auto f1 = [&] {
    auto y = O::max_pool2d(x, 3, 2, 1);
    return O::mean_all(O::mul(y, y));
  };
  CHECK(testing::grad_check<double>(f1, {{"x", x}}).max_rel_err < kTol);

  auto f2 = [&] {
    auto y = O::adaptive_avg_pool2d(x, 2, 2);
    return O::mean_all(O::mul(y, y));
  };
  CHECK(testing::grad_check<double>(f2, {{"x", x}}).max_rel_err < kTol);

  auto f3 = [&] {
    auto y = O::upsample_bilinear2x(x);
    return O::mean_all(O::mul(y, y));
  };
  CHECK(testing::grad_check<double>(f3, {{"x", x}}).max_rel_err < kTol);
}

TEST_CASE("broadcast gates, concat, heads, reductions") {
  Rng rng(31);
  auto x = rand_var<double>(rng, {2, 4, 3, 3});
  auto gate = rand_var<double>(rng, {2, 1, 3, 3}, 0.1, 0.9);
  auto sc = rand_var<double>(rng, {2, 4}, 0.1, 0.9);
  auto y2 = rand_var<double>(rng, {2, 2, 3, 3});
  auto f = [&] {
    auto a = O::mul_gate_hw(x, gate);
    auto b = O::mul_gate_c(x, sc);
    auto c = O::concat_channels<double>({a, b, y2});
    auto d = O::channel_max(c);
    auto e = O::channel_mean(c);
    auto g2 = O::global_avg_pool(O::concat_channels<double>({d, e}));
    auto seq = O::nchw_to_nlc(c);
    auto heads = O::split_heads(seq, 2);
    auto merged = O::merge_heads(heads);
    auto back = O::nlc_to_nchw(merged, 3, 3);
    return O::add(O::mean_all(O::mul(back, back)), O::mean_all(g2));
  };
  auto res = testing::grad_check<double>(f, {{"x", x}, {"gate", gate}, {"sc", sc}, {"y2", y2}});
  CHECK(res.max_rel_err < kTol);
}

TEST_CASE("loss op gradients and closed forms") {
  Rng rng(37);
  // multi-class CE: logits 0 -> loss = ln C
  {
    Var<double> z{Tensor<double>{{1, 3, 2, 2}}, true};
    Tensor<int32_t> lab{{1, 2, 2}};
    auto loss = O::softmax_cross_entropy(z, lab);
    CHECK(loss.val()[0] == doctest::Approx(std::log(3.0)).epsilon(1e-12));
  }
  // binary BCE at zero logits = ln 2
  {
    Var<double> z{Tensor<double>{{1, 1, 2, 2}}, true};
    Tensor<int32_t> lab{{1, 2, 2}};
    auto loss = O::sigmoid_bce(z, lab);
    CHECK(loss.val()[0] == doctest::Approx(std::log(2.0)).epsilon(1e-12));
  }
  auto z = rand_var<double>(rng, {2, 3, 4, 4}, -2, 2);
  Tensor<int32_t> lab{{2, 4, 4}};
  for (int64_t i = 0; i < lab.numel(); ++i) lab[i] = int32_t(rng.uniform_int(0, 2));
  auto f1 = [&] { return O::softmax_cross_entropy(z, lab); };
  CHECK(testing::grad_check<double>(f1, {{"z", z}}).max_rel_err < kTol);
  auto f2 = [&] { return O::soft_dice(z, lab, 1.0); };
  CHECK(testing::grad_check<double>(f2, {{"z", z}}).max_rel_err < kTol);

  auto zb = rand_var<double>(rng, {2, 1, 4, 4}, -2, 2);
  Tensor<int32_t> labb{{2, 4, 4}};
  for (int64_t i = 0; i < labb.numel(); ++i) labb[i] = int32_t(rng.uniform_int(0, 1));
  auto f3 = [&] { return O::sigmoid_bce(zb, labb); };
  CHECK(testing::grad_check<double>(f3, {{"zb", zb}}).max_rel_err < kTol);
  auto f4 = [&] { return O::soft_dice(zb, labb, 1.0); };
  CHECK(testing::grad_check<double>(f4, {{"zb", zb}}).max_rel_err < kTol);
}

TEST_CASE("scan core gradients match finite differences") {
  Rng rng(41);
  int64_t B = 1, L = 6, C = 3, N = 4;
  auto u = rand_var<double>(rng, {B, L, C});
  auto delta = rand_var<double>(rng, {B, L, C}, 0.05, 0.8);
  auto Bm = rand_var<double>(rng, {B, L, N});
  auto Cm = rand_var<double>(rng, {B, L, N});
  auto A = rand_var<double>(rng, {C, N}, -1.5, -0.1);
  auto D = rand_var<double>(rng, {C}, 0.2, 1.2);
  for (int64_t seg : {L, int64_t(2)}) {
    auto f = [&] {
      auto y = O::scan_core(u, delta, Bm, Cm, A, D, seg);
      return O::mean_all(O::mul(y, y));
    };
    auto res = testing::grad_check<double>(
        f, {{"u", u}, {"delta", delta}, {"B", Bm}, {"C", Cm}, {"A", A}, {"D", D}});
    CHECK(res.max_rel_err < kTol);
  }
}

TEST_CASE("gather/scatter scan orders are inverse bijections") {
  Rng rng(43);
  auto x = rand_var<double>(rng, {2, 3, 4, 5});
  for (auto o : {ScanOrder::row_lr, ScanOrder::row_rl, ScanOrder::col_tb, ScanOrder::col_bt}) {
    auto idx = std::make_shared<const std::vector<int64_t>>(scan_order_indices(o, 4, 5));
    auto seq = O::gather_scan(x, idx);
    auto back = O::scatter_scan(seq, idx, 4, 5);
    CHECK(max_abs_diff(back.val(), x.val()) == 0.0);
  }
  // distinctness of the four flattenings
  std::set<std::vector<int64_t>> uniq;
  for (auto o : {ScanOrder::row_lr, ScanOrder::row_rl, ScanOrder::col_tb, ScanOrder::col_bt})
    uniq.insert(scan_order_indices(o, 4, 5));
  CHECK(uniq.size() == 4);
}

TEST_CASE("bilinear upsample: constants and smooth round trip") {
  // constant map -> constant map of doubled size
  Var<double> c{Tensor<double>{{1, 2, 5, 5}, 0.37}};
  auto up = O::upsample_bilinear2x(c);
  CHECK(up.shape() == Shape{1, 2, 10, 10});
  for (int64_t i = 0; i < up.numel(); ++i) CHECK(up.val()[i] == doctest::Approx(0.37).epsilon(1e-12));

  // band-limited random field: 2x2-mean(upsample(f)) stays within 0.05 of f
  Rng rng(314);
  int64_t H = 16, W = 16;
  Tensor<double> f{{1, 1, H, W}};
  for (int k = 0; k < 4; ++k) {
    double fy = rng.uniform(0.3, 1.2), fx = rng.uniform(0.3, 1.2);
    double py = rng.uniform(0, 6.28), px = rng.uniform(0, 6.28);
    double amp = rng.uniform(0.05, 0.25);
    for (int64_t y = 0; y < H; ++y)
      for (int64_t x = 0; x < W; ++x)
        f.at4(0, 0, y, x) += amp * std::sin(fy * y / 2.0 + py) * std::cos(fx * x / 2.0 + px);
  }
  auto up2 = O::upsample_bilinear2x(Var<double>(f));
  auto down = O::adaptive_avg_pool2d(up2, H, W);  // 2x2 mean windows
  CHECK(max_abs_diff(down.val(), f) <= 0.05);
}
