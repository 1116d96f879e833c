#pragma once

// Dataset ingestion: tab-separated manifests pointing at raster image/mask
// pairs, loaded into normalized float records with deterministic ordering.

#include <filesystem>

#include "mcafu/metrics.hpp"
#include "mcafu/pnm.hpp"

namespace mcafu {

struct SampleRecord {
  std::string id, case_id;
  Tensor<float> image;  // (C,H,W), min-max normalized to [0,1]
  LabelMap mask;        // (H,W) integer labels
  std::optional<Spacing> spacing;
};

struct ManifestEntry {
  std::string image_path, mask_path, case_id;
};

struct DatasetManifest {
  std::string root;  // directory of the manifest file; relative paths resolve here
  int64_t num_classes = 0;
  std::vector<std::string> palette;  // label -> name
  std::vector<ManifestEntry> entries;
};

/// Manifest format: one header line `num_classes=K<TAB>palette=a|b|c`,
/// then `image<TAB>mask<TAB>case_id` rows.
inline DatasetManifest load_manifest(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw DataError("cannot open manifest: " + path);
  DatasetManifest m;
  m.root = std::filesystem::path(path).parent_path().string();
  std::string line;
  if (!std::getline(f, line)) throw DataError("empty manifest: " + path);
  {
    std::istringstream hs(line);
    std::string field;
    while (std::getline(hs, field, '\t')) {
      auto eq = field.find('=');
      if (eq == std::string::npos) throw DataError("bad manifest header field: " + field);
      std::string k = field.substr(0, eq), v = field.substr(eq + 1);
      if (k == "num_classes") m.num_classes = std::stoll(v);
      else if (k == "palette") {
        std::istringstream ps(v);
        std::string name;
        while (std::getline(ps, name, '|')) m.palette.push_back(name);
      } else throw DataError("unknown manifest header key: " + k);
    }
  }
  if (m.num_classes < 1) throw DataError("manifest missing num_classes: " + path);
  if (!m.palette.empty() && int64_t(m.palette.size()) != m.num_classes)
    throw DataError("palette size does not cover num_classes: " + path);
  while (std::getline(f, line)) {
    if (line.empty() || line[0] == '#') continue;
    std::istringstream ls(line);
    ManifestEntry e;
    if (!std::getline(ls, e.image_path, '\t') || !std::getline(ls, e.mask_path, '\t') ||
        !std::getline(ls, e.case_id, '\t'))
      throw DataError("bad manifest row: " + line);
    m.entries.push_back(std::move(e));
  }
  return m;
}

inline std::string resolve_path(const DatasetManifest& m, const std::string& p) {
  std::filesystem::path fp(p);
  if (fp.is_absolute() || m.root.empty()) return p;
  return (std::filesystem::path(m.root) / fp).string();
}

/// Loads one record; image min-max normalized per image, mask kept integer.
inline SampleRecord load_sample(const DatasetManifest& m, const ManifestEntry& e) {
  SampleRecord rec;
  rec.id = std::filesystem::path(e.image_path).stem().string();
  rec.case_id = e.case_id;
  RasterImage img, msk;
  try {
    img = read_pnm(resolve_path(m, e.image_path));
    msk = read_pnm(resolve_path(m, e.mask_path));
  } catch (const DataError& err) {
    throw DataError("sample " + rec.id + ": " + err.what());
  }
  if (msk.c != 1) throw DataError("sample " + rec.id + ": mask must be single-channel");
  if (msk.h != img.h || msk.w != img.w)
    throw DataError("sample " + rec.id + ": image and mask resolutions differ");
  rec.image = Tensor<float>({img.c, img.h, img.w});
  uint16_t lo = img.px[0], hi = img.px[0];
  for (uint16_t v : img.px) {
    lo = std::min(lo, v);
    hi = std::max(hi, v);
  }
  float scale = hi > lo ? 1.0f / float(hi - lo) : 0.0f;
  for (int64_t ch = 0; ch < img.c; ++ch)
    for (int64_t y = 0; y < img.h; ++y)
      for (int64_t x = 0; x < img.w; ++x)
        rec.image[(ch * img.h + y) * img.w + x] = float(img.at(y, x, ch) - lo) * scale;
  rec.mask = LabelMap({msk.h, msk.w});
  for (int64_t i = 0; i < rec.mask.numel(); ++i) {
    int32_t lab = msk.px[size_t(i)];
    if (lab >= m.num_classes)
      throw DataError("sample " + rec.id + ": mask label " + std::to_string(lab) +
                      " out of range [0," + std::to_string(m.num_classes) + ")");
    rec.mask[i] = lab;
  }
  return rec;
}

/// Deterministic order by id regardless of manifest row order.
inline std::vector<SampleRecord> load_dataset(const DatasetManifest& m) {
  std::vector<SampleRecord> out;
  out.reserve(m.entries.size());
  for (const auto& e : m.entries) out.push_back(load_sample(m, e));
  std::sort(out.begin(), out.end(),
            [](const SampleRecord& a, const SampleRecord& b) { return a.id < b.id; });
  return out;
}

inline void save_manifest(const DatasetManifest& m, const std::string& path) {
  std::ofstream f(path);
  if (!f) throw DataError("cannot write manifest: " + path);
  f << "num_classes=" << m.num_classes;
  if (!m.palette.empty()) {
    f << "\tpalette=";
    for (size_t i = 0; i < m.palette.size(); ++i) f << (i ? "|" : "") << m.palette[i];
  }
  f << "\n";
  for (const auto& e : m.entries) f << e.image_path << "\t" << e.mask_path << "\t" << e.case_id << "\n";
}

}  // namespace mcafu
