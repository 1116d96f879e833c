#pragma once

// Training-time augmentation: independent horizontal/vertical flips and a
// uniform rotation in [-20, +20] degrees. One geometric transform is sampled
// and applied to image (bilinear, zero fill) and mask (nearest, background
// fill) alike.

#include "mcafu/data.hpp"
#include "mcafu/rng.hpp"

namespace mcafu {

struct AugmentParams {
  bool hflip = false, vflip = false;
  double angle_deg = 0.0;

  static AugmentParams sample(Rng& rng) {
    AugmentParams p;
    p.hflip = rng.bernoulli(0.5);
    p.vflip = rng.bernoulli(0.5);
    p.angle_deg = rng.uniform(-20.0, 20.0);
    return p;
  }
  bool identity() const { return !hflip && !vflip && angle_deg == 0.0; }
};

inline SampleRecord apply_augment(const SampleRecord& in, const AugmentParams& p) {
  if (p.identity()) return in;
  int64_t C = in.image.shape()[0], H = in.image.shape()[1], W = in.image.shape()[2];
  SampleRecord out;
  out.id = in.id;
  out.case_id = in.case_id;
  out.spacing = in.spacing;
  out.image = Tensor<float>({C, H, W});
  out.mask = LabelMap({H, W});

  double cy = double(H - 1) / 2.0, cx = double(W - 1) / 2.0;
  double rad = p.angle_deg * 3.14159265358979323846 / 180.0;
  double cs = std::cos(rad), sn = std::sin(rad);

  for (int64_t y = 0; y < H; ++y)
    for (int64_t x = 0; x < W; ++x) {
      // inverse map: rotate back, then undo flips
      double dy = double(y) - cy, dx = double(x) - cx;
      double sy = cs * dy - sn * dx + cy;
      double sx = sn * dy + cs * dx + cx;
      if (p.vflip) sy = double(H - 1) - sy;
      if (p.hflip) sx = double(W - 1) - sx;

      // mask: nearest neighbor, background outside
      int64_t ny = int64_t(std::lround(sy)), nx = int64_t(std::lround(sx));
      out.mask[y * W + x] =
          (ny >= 0 && ny < H && nx >= 0 && nx < W) ? in.mask[ny * W + nx] : 0;

      // image: bilinear, zero outside
      int64_t y0 = int64_t(std::floor(sy)), x0 = int64_t(std::floor(sx));
      double wy = sy - double(y0), wx = sx - double(x0);
      for (int64_t c = 0; c < C; ++c) {
        auto tap = [&](int64_t yy, int64_t xx) -> double {
          if (yy < 0 || yy >= H || xx < 0 || xx >= W) return 0.0;
          return double(in.image[(c * H + yy) * W + xx]);
        };
        double v = (1 - wy) * ((1 - wx) * tap(y0, x0) + wx * tap(y0, x0 + 1)) +
                   wy * ((1 - wx) * tap(y0 + 1, x0) + wx * tap(y0 + 1, x0 + 1));
        out.image[(c * H + y) * W + x] = float(v);
      }
    }
  return out;
}

inline SampleRecord augment(const SampleRecord& in, Rng& rng) {
  return apply_augment(in, AugmentParams::sample(rng));
}

}  // namespace mcafu
