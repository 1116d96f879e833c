#pragma once

// Synthetic-shapes dataset: non-overlapping ellipses/rectangles, one distinct
// intensity band per class, Gaussian noise, exact masks. Fully reproducible
// from the seed; files are written byte-identically across runs.

#include <filesystem>
#include <iomanip>

#include "mcafu/augment.hpp"

namespace mcafu {

struct SynthOptions {
  int64_t n = 8;
  int64_t size = 64;
  int64_t num_classes = 3;  // background + (num_classes-1) shape classes
  uint64_t seed = 0;
  double noise_sigma = 0.05;
  double min_fg = 0.05, max_fg = 0.5;
  int64_t case_group = 4;  // samples per case id
};

namespace synth_detail {

struct Shape {
  bool ellipse = true;
  double cy = 0, cx = 0, ry = 0, rx = 0;
  int32_t cls = 1;

  bool contains(double y, double x) const {
    if (ellipse) {
      double a = (y - cy) / ry, b = (x - cx) / rx;
      return a * a + b * b <= 1.0;
    }
    return std::abs(y - cy) <= ry && std::abs(x - cx) <= rx;
  }
};

/// One mask layout: up to num_classes-1 shapes with distinct classes,
/// non-overlapping, foreground fraction within bounds.
inline bool try_layout(Rng& rng, int64_t size, int64_t num_classes, double min_fg, double max_fg,
                       LabelMap& mask) {
  mask.fill(0);
  int64_t k = rng.uniform_int(1, num_classes - 1);
  std::vector<int32_t> classes;
  for (int32_t c = 1; c < num_classes; ++c) classes.push_back(c);
  for (size_t i = classes.size(); i > 1; --i)
    std::swap(classes[i - 1], classes[size_t(rng.uniform_int(0, int64_t(i) - 1))]);
  classes.resize(size_t(k));

  std::vector<Shape> placed;
  for (int32_t cls : classes) {
    bool ok = false;
    for (int attempt = 0; attempt < 60 && !ok; ++attempt) {
      Shape s;
      s.ellipse = rng.bernoulli(0.5);
      s.cls = cls;
      s.ry = rng.uniform(0.08, 0.22) * double(size);
      s.rx = rng.uniform(0.08, 0.22) * double(size);
      s.cy = rng.uniform(s.ry + 2, double(size) - s.ry - 3);
      s.cx = rng.uniform(s.rx + 2, double(size) - s.rx - 3);
      bool overlap = false;
      for (const auto& o : placed) {
        double dy = std::abs(s.cy - o.cy), dx = std::abs(s.cx - o.cx);
        if (dy <= s.ry + o.ry + 1 && dx <= s.rx + o.rx + 1) { overlap = true; break; }
      }
      if (!overlap) {
        placed.push_back(s);
        ok = true;
      }
    }
    if (!ok) return false;
  }
  int64_t fg = 0;
  for (int64_t y = 0; y < size; ++y)
    for (int64_t x = 0; x < size; ++x)
      for (const auto& s : placed)
        if (s.contains(double(y), double(x))) {
          mask[y * size + x] = s.cls;
          ++fg;
          break;
        }
  double frac = double(fg) / double(size * size);
  return frac >= min_fg && frac <= max_fg;
}

}  // namespace synth_detail

/// Generates n image/mask pairs plus a manifest under `dir`.
inline DatasetManifest synth_generate(const std::string& dir, const SynthOptions& opt) {
  if (opt.n < 1) throw DataError("synth: need n >= 1");
  if (opt.size % 32 != 0) throw DataError("synth: size must be a multiple of 32");
  if (opt.num_classes < 2) throw DataError("synth: need at least one foreground class");
  std::filesystem::create_directories(dir);
  Rng rng(opt.seed);
  DatasetManifest man;
  man.root = dir;
  man.num_classes = opt.num_classes;
  man.palette.push_back("background");
  for (int64_t c = 1; c < opt.num_classes; ++c) man.palette.push_back("class" + std::to_string(c));

  for (int64_t i = 0; i < opt.n; ++i) {
    LabelMap mask{{opt.size, opt.size}};
    bool ok = false;
    for (int attempt = 0; attempt < 50 && !ok; ++attempt)
      ok = synth_detail::try_layout(rng, opt.size, opt.num_classes, opt.min_fg, opt.max_fg, mask);
    if (!ok)
      throw DataError("synth: could not place shapes within the foreground budget; "
                      "try fewer classes or a larger canvas");

    // Distinct intensity band per class; identical base across RGB, with
    // independent per-pixel noise.
    RasterImage img;
    img.h = opt.size;
    img.w = opt.size;
    img.c = 3;
    img.maxval = 255;
    img.px.resize(size_t(opt.size * opt.size * 3));
    std::vector<double> base(size_t(opt.num_classes));
    for (int64_t c = 0; c < opt.num_classes; ++c)
      base[size_t(c)] = (double(c) + 0.5) / double(opt.num_classes) + rng.uniform(-0.04, 0.04);
    for (int64_t y = 0; y < opt.size; ++y)
      for (int64_t x = 0; x < opt.size; ++x) {
        double b = base[size_t(mask[y * opt.size + x])];
        for (int64_t ch = 0; ch < 3; ++ch) {
          double v = b + rng.normal(0.0, opt.noise_sigma);
          v = std::clamp(v, 0.0, 1.0);
          img.at(y, x, ch) = uint16_t(std::lround(v * 255.0));
        }
      }
    RasterImage mimg;
    mimg.h = opt.size;
    mimg.w = opt.size;
    mimg.c = 1;
    mimg.maxval = 255;
    mimg.px.resize(size_t(opt.size * opt.size));
    for (int64_t p = 0; p < opt.size * opt.size; ++p) mimg.px[size_t(p)] = uint16_t(mask[p]);

    std::ostringstream stem;
    stem << "synth_" << std::setw(4) << std::setfill('0') << i;
    write_pnm(dir + "/" + stem.str() + ".ppm", img);
    write_pnm(dir + "/" + stem.str() + "_mask.pgm", mimg);
    std::ostringstream cid;
    cid << "case_" << std::setw(3) << std::setfill('0') << (i / std::max<int64_t>(1, opt.case_group));
    man.entries.push_back({stem.str() + ".ppm", stem.str() + "_mask.pgm", cid.str()});
  }
  save_manifest(man, dir + "/manifest.tsv");
  return man;
}

}  // namespace mcafu
