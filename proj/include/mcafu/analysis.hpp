#pragma once

// Parameter and FLOP accounting for a configured model: exact trainable
// parameter count by traversal, and multiply-accumulate counts recorded
// during one batch-1 forward pass at the configured input size.

#include "mcafu/model.hpp"

namespace mcafu {

struct ComplexityReport {
  int64_t param_count = 0;           // traversal over the parameter store
  int64_t expected_param_count = 0;  // second traversal: per-layer formulas
  int64_t total_macs = 0;
  std::map<std::string, int64_t> macs_by_scope;
  std::map<std::string, int64_t> macs_by_kind;

  double params_m() const { return double(param_count) / 1e6; }
  double gmacs() const { return double(total_macs) / 1e9; }
};

template <typename T = float>
ComplexityReport analyze_model(MambaCafuNet<T>& net) {
  ComplexityReport rep;
  rep.param_count = net.params().param_count();
  rep.expected_param_count = net.expected_param_count();
  complexity::Recorder rec;
  {
    complexity::RecorderGuard guard(rec);
    NoGradGuard ng;
    Ctx ctx;  // eval mode
    const auto& cfg = net.config();
    Tensor<T> img{{1, cfg.in_channels, cfg.input_size, cfg.input_size}};
    Rng rng(1);
    rng.fill_uniform(img, 0.0, 1.0);
    net.forward(Var<T>(img), ctx);
  }
  rep.total_macs = rec.total();
  rep.macs_by_scope = rec.by_top_scope();
  rep.macs_by_kind = rec.by_kind();
  return rep;
}

template <typename T = float>
ComplexityReport count_params_flops(const ModelConfig& cfg) {
  MambaCafuNet<T> net(cfg);
  return analyze_model(net);
}

inline std::string complexity_table(const ComplexityReport& r) {
  std::ostringstream os;
  os.setf(std::ios::fixed);
  os.precision(2);
  os << "parameters: " << r.param_count << " (" << r.params_m() << "M)\n";
  os << "flops:      " << r.gmacs() << " GMac (batch 1 forward)\n";
  os << "-- per block --\n";
  for (const auto& [scope, macs] : r.macs_by_scope)
    os << "  " << scope << ": " << double(macs) / 1e9 << " GMac\n";
  os << "-- per op kind --\n";
  for (const auto& [kind, macs] : r.macs_by_kind)
    os << "  " << kind << ": " << double(macs) / 1e9 << " GMac\n";
  return os.str();
}

}  // namespace mcafu
