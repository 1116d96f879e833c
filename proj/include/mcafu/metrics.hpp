#pragma once

// Evaluation metrics on integer label maps: Dice, IoU, pixel accuracy and
// the 95th-percentile boundary distance, plus the per-sample/per-case report.
//
// Conventions (logged in report metadata so results are auditable):
//  - DSC/IoU: both masks empty -> 1; exactly one empty -> 0.
//  - HD95: both empty -> 0; exactly one empty -> class skipped for the mean.
//  - Class means cover foreground classes only.
//  - HD95 is computed per 2D slice and aggregated per case by mean.

#include <algorithm>
#include <cmath>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "mcafu/tensor.hpp"

namespace mcafu {

using LabelMap = Tensor<int32_t>;  // (H,W)

inline int64_t mask_count(const LabelMap& m, int32_t cls) {
  int64_t n = 0;
  for (int64_t i = 0; i < m.numel(); ++i) n += (m[i] == cls);
  return n;
}

/// Dice similarity on the binary masks {a==cls}, {b==cls}.
inline double dsc(const LabelMap& a, const LabelMap& b, int32_t cls = 1) {
  if (a.shape() != b.shape()) throw ShapeError("dsc: mask shapes differ");
  int64_t na = 0, nb = 0, ni = 0;
  for (int64_t i = 0; i < a.numel(); ++i) {
    bool ia = a[i] == cls, ib = b[i] == cls;
    na += ia;
    nb += ib;
    ni += (ia && ib);
  }
  if (na + nb == 0) return 1.0;
  return 2.0 * double(ni) / double(na + nb);
}

inline double iou(const LabelMap& a, const LabelMap& b, int32_t cls = 1) {
  if (a.shape() != b.shape()) throw ShapeError("iou: mask shapes differ");
  int64_t ni = 0, nu = 0;
  for (int64_t i = 0; i < a.numel(); ++i) {
    bool ia = a[i] == cls, ib = b[i] == cls;
    ni += (ia && ib);
    nu += (ia || ib);
  }
  if (nu == 0) return 1.0;
  return double(ni) / double(nu);
}

/// Pixel accuracy: trace of the confusion matrix over its total.
inline double accuracy(const LabelMap& pred, const LabelMap& gt) {
  if (pred.shape() != gt.shape()) throw ShapeError("accuracy: mask shapes differ");
  int64_t hit = 0;
  for (int64_t i = 0; i < pred.numel(); ++i) hit += (pred[i] == gt[i]);
  return pred.numel() ? double(hit) / double(pred.numel()) : 1.0;
}

/// Boundary pixels: mask members with a 4-neighbor outside the mask (image
/// border counts as outside).
inline std::vector<std::pair<int64_t, int64_t>> boundary_pixels(const LabelMap& m, int32_t cls) {
  int64_t H = m.shape()[0], W = m.shape()[1];
  std::vector<std::pair<int64_t, int64_t>> out;
  auto inside = [&](int64_t y, int64_t x) {
    return y >= 0 && y < H && x >= 0 && x < W && m[y * W + x] == cls;
  };
  for (int64_t y = 0; y < H; ++y)
    for (int64_t x = 0; x < W; ++x) {
      if (m[y * W + x] != cls) continue;
      if (!inside(y - 1, x) || !inside(y + 1, x) || !inside(y, x - 1) || !inside(y, x + 1))
        out.push_back({y, x});
    }
  return out;
}

/// Linear-interpolation percentile of an unsorted sample.
inline double percentile(std::vector<double> v, double p) {
  if (v.empty()) return 0.0;
  std::sort(v.begin(), v.end());
  double rank = p / 100.0 * double(v.size() - 1);
  size_t lo = size_t(std::floor(rank));
  size_t hi = size_t(std::ceil(rank));
  double frac = rank - double(lo);
  return v[lo] + (v[hi] - v[lo]) * frac;
}

struct Spacing {
  double row = 1.0, col = 1.0;
};

/// 95th percentile of the pooled directed boundary distances. nullopt means
/// the value is skipped (exactly one mask empty).
inline std::optional<double> hd95(const LabelMap& a, const LabelMap& b, Spacing sp = {},
                                  int32_t cls = 1) {
  if (a.shape() != b.shape()) throw ShapeError("hd95: mask shapes differ");
  auto ba = boundary_pixels(a, cls);
  auto bb = boundary_pixels(b, cls);
  if (ba.empty() && bb.empty()) return 0.0;
  if (ba.empty() || bb.empty()) return std::nullopt;
  auto directed = [&](const auto& from, const auto& to, std::vector<double>& pool) {
    for (const auto& [fy, fx] : from) {
      double best = std::numeric_limits<double>::infinity();
      for (const auto& [ty, tx] : to) {
        double dy = double(fy - ty) * sp.row;
        double dx = double(fx - tx) * sp.col;
        best = std::min(best, dy * dy + dx * dx);
      }
      pool.push_back(std::sqrt(best));
    }
  };
  std::vector<double> pool;
  pool.reserve(ba.size() + bb.size());
  directed(ba, bb, pool);
  directed(bb, ba, pool);
  return percentile(std::move(pool), 95.0);
}

/// Maximum Hausdorff distance over the same boundary sets (upper bounds hd95).
inline std::optional<double> hausdorff_max(const LabelMap& a, const LabelMap& b, Spacing sp = {},
                                           int32_t cls = 1) {
  auto ba = boundary_pixels(a, cls);
  auto bb = boundary_pixels(b, cls);
  if (ba.empty() && bb.empty()) return 0.0;
  if (ba.empty() || bb.empty()) return std::nullopt;
  auto directed = [&](const auto& from, const auto& to) {
    double worst = 0;
    for (const auto& [fy, fx] : from) {
      double best = std::numeric_limits<double>::infinity();
      for (const auto& [ty, tx] : to) {
        double dy = double(fy - ty) * sp.row;
        double dx = double(fx - tx) * sp.col;
        best = std::min(best, dy * dy + dx * dx);
      }
      worst = std::max(worst, best);
    }
    return std::sqrt(worst);
  };
  return std::max(directed(ba, bb), directed(bb, ba));
}

// ---------------------------------------------------------------------------

struct ClassMetrics {
  double dsc = 0, iou = 0;
  std::optional<double> hd95;
};

struct MetricsReport {
  std::string id, case_id;
  std::map<int32_t, ClassMetrics> per_class;  // foreground classes
  double mean_dsc = 0, mean_iou = 0, accuracy = 0;
  std::optional<double> mean_hd95;
  std::vector<int32_t> skipped_classes;  // one-empty HD95 cases
  std::string hd95_mode = "per_slice_2d";
};

/// Per-sample metrics against ground truth over all foreground classes.
inline MetricsReport evaluate_sample(const LabelMap& pred, const LabelMap& gt,
                                     int64_t label_classes, Spacing sp = {},
                                     const std::string& id = "", const std::string& case_id = "") {
  MetricsReport r;
  r.id = id;
  r.case_id = case_id;
  r.accuracy = accuracy(pred, gt);
  double sd = 0, si = 0, sh = 0;
  int64_t nh = 0, nfg = 0;
  for (int32_t c = 1; c < label_classes; ++c) {
    ClassMetrics m;
    m.dsc = dsc(pred, gt, c);
    m.iou = iou(pred, gt, c);
    m.hd95 = hd95(pred, gt, sp, c);
    r.per_class[c] = m;
    sd += m.dsc;
    si += m.iou;
    ++nfg;
    if (m.hd95.has_value()) {
      sh += *m.hd95;
      ++nh;
    } else {
      r.skipped_classes.push_back(c);
    }
  }
  if (nfg) {
    r.mean_dsc = sd / double(nfg);
    r.mean_iou = si / double(nfg);
  }
  if (nh) r.mean_hd95 = sh / double(nh);
  return r;
}

inline std::string csv_header(int64_t label_classes) {
  std::string s = "id,case_id,accuracy,mean_dsc,mean_iou,mean_hd95";
  for (int32_t c = 1; c < label_classes; ++c) {
    s += ",dsc_" + std::to_string(c) + ",iou_" + std::to_string(c) + ",hd95_" + std::to_string(c);
  }
  s += ",skipped";
  return s;
}

inline std::string csv_row(const MetricsReport& r, int64_t label_classes) {
  std::ostringstream os;
  os.precision(10);
  os << r.id << "," << r.case_id << "," << r.accuracy << "," << r.mean_dsc << "," << r.mean_iou
     << ",";
  if (r.mean_hd95) os << *r.mean_hd95;
  for (int32_t c = 1; c < label_classes; ++c) {
    auto it = r.per_class.find(c);
    os << ",";
    if (it != r.per_class.end()) os << it->second.dsc;
    os << ",";
    if (it != r.per_class.end()) os << it->second.iou;
    os << ",";
    if (it != r.per_class.end() && it->second.hd95) os << *it->second.hd95;
  }
  os << ",";
  for (size_t i = 0; i < r.skipped_classes.size(); ++i)
    os << (i ? ";" : "") << r.skipped_classes[i];
  return os.str();
}

/// Mean of reports (used for case-level and run-level aggregation); HD95
/// averages over the reports that carry a value.
inline MetricsReport aggregate_reports(const std::vector<MetricsReport>& rs,
                                       const std::string& id) {
  MetricsReport out;
  out.id = id;
  if (rs.empty()) return out;
  double sa = 0, sd = 0, si = 0, sh = 0;
  int64_t nh = 0;
  std::map<int32_t, std::pair<ClassMetrics, std::pair<int64_t, int64_t>>> acc;  // sums + (n, n_hd)
  for (const auto& r : rs) {
    sa += r.accuracy;
    sd += r.mean_dsc;
    si += r.mean_iou;
    if (r.mean_hd95) {
      sh += *r.mean_hd95;
      ++nh;
    }
    for (const auto& [c, m] : r.per_class) {
      auto& slot = acc[c];
      slot.first.dsc += m.dsc;
      slot.first.iou += m.iou;
      slot.second.first += 1;
      if (m.hd95) {
        slot.first.hd95 = slot.first.hd95.value_or(0.0) + *m.hd95;
        slot.second.second += 1;
      }
    }
  }
  double n = double(rs.size());
  out.accuracy = sa / n;
  out.mean_dsc = sd / n;
  out.mean_iou = si / n;
  if (nh) out.mean_hd95 = sh / double(nh);
  for (auto& [c, slot] : acc) {
    ClassMetrics m;
    m.dsc = slot.first.dsc / double(slot.second.first);
    m.iou = slot.first.iou / double(slot.second.first);
    if (slot.second.second) m.hd95 = *slot.first.hd95 / double(slot.second.second);
    out.per_class[c] = m;
  }
  return out;
}

}  // namespace mcafu
