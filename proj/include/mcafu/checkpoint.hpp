#pragma once

// Named-array archive used for checkpoints and backbone weight files.
// Layout: magic, entry count, then per entry: name, dtype tag, rank, dims,
// raw little-endian data. Text metadata rides along as byte entries.

#include <cstring>
#include <fstream>

#include "mcafu/config.hpp"
#include "mcafu/layers.hpp"

namespace mcafu {

struct ArchiveEntry {
  std::string name;
  uint8_t dtype = 0;  // 0=f32, 1=f64, 2=bytes
  Shape dims;
  std::vector<unsigned char> raw;

  template <typename T>
  Tensor<T> as_tensor() const {
    size_t esz = dtype == 0 ? 4 : 8;
    if (dtype == 2 || raw.size() != size_t(numel_of(dims)) * esz)
      throw DataError("archive entry " + name + ": not a tensor or size mismatch");
    Tensor<T> t{dims};
    if ((dtype == 0 && sizeof(T) == 4) || (dtype == 1 && sizeof(T) == 8)) {
      std::memcpy(t.data(), raw.data(), raw.size());
    } else if (dtype == 0) {
      const float* s = reinterpret_cast<const float*>(raw.data());
      for (int64_t i = 0; i < t.numel(); ++i) t[i] = T(s[i]);
    } else {
      const double* s = reinterpret_cast<const double*>(raw.data());
      for (int64_t i = 0; i < t.numel(); ++i) t[i] = T(s[i]);
    }
    return t;
  }
  std::string as_text() const { return std::string(raw.begin(), raw.end()); }
};

class Archive {
 public:
  template <typename T>
  void put_tensor(const std::string& name, const Tensor<T>& t) {
    ArchiveEntry e;
    e.name = name;
    e.dtype = sizeof(T) == 4 ? 0 : 1;
    e.dims = t.shape();
    e.raw.resize(size_t(t.numel()) * sizeof(T));
    std::memcpy(e.raw.data(), t.data(), e.raw.size());
    entries_.push_back(std::move(e));
  }
  void put_text(const std::string& name, const std::string& text) {
    ArchiveEntry e;
    e.name = name;
    e.dtype = 2;
    e.dims = {int64_t(text.size())};
    e.raw.assign(text.begin(), text.end());
    entries_.push_back(std::move(e));
  }

  const std::vector<ArchiveEntry>& entries() const { return entries_; }
  const ArchiveEntry* find(const std::string& name) const {
    for (const auto& e : entries_)
      if (e.name == name) return &e;
    return nullptr;
  }

  void save(const std::string& path) const {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw DataError("cannot write archive: " + path);
    f.write("MCAFUAR1", 8);
    write_u64(f, entries_.size());
    for (const auto& e : entries_) {
      write_u64(f, e.name.size());
      f.write(e.name.data(), std::streamsize(e.name.size()));
      f.put(char(e.dtype));
      write_u64(f, e.dims.size());
      for (int64_t d : e.dims) write_u64(f, uint64_t(d));
      write_u64(f, e.raw.size());
      f.write(reinterpret_cast<const char*>(e.raw.data()), std::streamsize(e.raw.size()));
    }
    if (!f) throw DataError("write failed: " + path);
  }

  static Archive load(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw DataError("cannot open archive: " + path);
    char magic[8];
    f.read(magic, 8);
    if (!f || std::memcmp(magic, "MCAFUAR1", 8) != 0)
      throw DataError("not a checkpoint archive: " + path);
    Archive a;
    uint64_t n = read_u64(f);
    for (uint64_t i = 0; i < n; ++i) {
      ArchiveEntry e;
      uint64_t nl = read_u64(f);
      e.name.resize(nl);
      f.read(e.name.data(), std::streamsize(nl));
      e.dtype = uint8_t(f.get());
      uint64_t rank = read_u64(f);
      e.dims.resize(rank);
      for (uint64_t d = 0; d < rank; ++d) e.dims[d] = int64_t(read_u64(f));
      uint64_t sz = read_u64(f);
      e.raw.resize(sz);
      f.read(reinterpret_cast<char*>(e.raw.data()), std::streamsize(sz));
      if (!f) throw DataError("truncated archive: " + path);
      a.entries_.push_back(std::move(e));
    }
    return a;
  }

 private:
  static void write_u64(std::ostream& f, uint64_t v) {
    unsigned char b[8];
    for (int i = 0; i < 8; ++i) b[i] = (v >> (8 * i)) & 0xff;
    f.write(reinterpret_cast<char*>(b), 8);
  }
  static uint64_t read_u64(std::istream& f) {
    unsigned char b[8];
    f.read(reinterpret_cast<char*>(b), 8);
    uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= uint64_t(b[i]) << (8 * i);
    return v;
  }
  std::vector<ArchiveEntry> entries_;
};

/// Snapshot of all parameters + buffers plus run metadata.
template <typename T>
Archive checkpoint_archive(const ParamStore<T>& ps, const std::string& config_text, uint64_t seed,
                           int64_t step) {
  Archive a;
  a.put_text("__meta__/config", config_text);
  a.put_text("__meta__/seed", std::to_string(seed));
  a.put_text("__meta__/step", std::to_string(step));
  for (const auto& p : ps.params()) a.put_tensor("param/" + p.name, p.var.val());
  for (const auto& b : ps.buffers()) a.put_tensor("buffer/" + b.name, b.tensor);
  return a;
}

struct LoadReport {
  int64_t matched = 0, missing = 0, extra = 0;
  std::vector<std::string> notes;
};

/// Loads arrays back into a parameter store by name. Every shape is checked;
/// a partial match is an error unless allow_partial.
template <typename T>
LoadReport load_into(ParamStore<T>& ps, const Archive& a, bool allow_partial = false) {
  LoadReport rep;
  auto assign = [&](const std::string& key, Tensor<T>& dst) {
    const ArchiveEntry* e = a.find(key);
    if (!e) {
      ++rep.missing;
      rep.notes.push_back("missing: " + key);
      return;
    }
    if (e->dims != dst.shape())
      throw DataError("shape mismatch for " + key + ": archive " + shape_str(e->dims) +
                      " vs model " + shape_str(dst.shape()));
    Tensor<T> t = e->template as_tensor<T>();
    std::memcpy(dst.data(), t.data(), size_t(t.numel()) * sizeof(T));
    ++rep.matched;
  };
  for (auto& p : ps.params()) assign("param/" + p.name, p.var.val());
  for (auto& b : ps.buffers()) assign("buffer/" + b.name, b.tensor);
  int64_t model_keys = int64_t(ps.params().size() + ps.buffers().size());
  rep.extra = int64_t(a.entries().size()) - rep.matched;
  for (const auto& e : a.entries())
    if (e.name.rfind("__meta__/", 0) == 0) --rep.extra;  // metadata is expected
  if (rep.missing > 0 && !allow_partial)
    throw DataError("checkpoint is a partial match (" + std::to_string(rep.missing) + " of " +
                    std::to_string(model_keys) + " arrays missing); pass --allow-partial to accept");
  return rep;
}

}  // namespace mcafu
