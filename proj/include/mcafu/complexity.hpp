#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

namespace mcafu::complexity {

/// Multiply-accumulate recorder. When enabled, primitive ops report their MAC
/// cost here during a forward pass; blocks push scope names so the report can
/// be broken down per module.
struct Recorder {
  struct Entry {
    std::string scope;
    std::string kind;
    int64_t macs = 0;
  };
  std::vector<Entry> entries;
  std::vector<std::string> scope_stack;

  int64_t total() const {
    int64_t t = 0;
    for (const auto& e : entries) t += e.macs;
    return t;
  }
  /// Aggregates by scope, truncated to at most two path components
  /// ("encoder.stage1", "transformer", ...).
  std::map<std::string, int64_t> by_top_scope() const {
    std::map<std::string, int64_t> m;
    for (const auto& e : entries) {
      auto first = e.scope.find('.');
      auto cut = first == std::string::npos ? first : e.scope.find('.', first + 1);
      m[cut == std::string::npos ? e.scope : e.scope.substr(0, cut)] += e.macs;
    }
    return m;
  }
  std::map<std::string, int64_t> by_kind() const {
    std::map<std::string, int64_t> m;
    for (const auto& e : entries) m[e.kind] += e.macs;
    return m;
  }
};

namespace detail {
inline thread_local Recorder* active = nullptr;
}

inline bool enabled() { return detail::active != nullptr; }

inline void add_macs(const char* kind, int64_t macs) {
  if (!detail::active) return;
  std::string scope;
  if (!detail::active->scope_stack.empty()) scope = detail::active->scope_stack.back();
  detail::active->entries.push_back({std::move(scope), kind, macs});
}

struct RecorderGuard {
  explicit RecorderGuard(Recorder& r) { detail::active = &r; }
  ~RecorderGuard() { detail::active = nullptr; }
};

struct ScopeGuard {
  explicit ScopeGuard(const std::string& name) {
    if (!detail::active) return;
    active_ = true;
    auto& st = detail::active->scope_stack;
    st.push_back(st.empty() ? name : st.back() + "." + name);
  }
  ~ScopeGuard() {
    if (active_ && detail::active) detail::active->scope_stack.pop_back();
  }
  bool active_ = false;
};

}  // namespace mcafu::complexity
