#pragma once

// Model/training configuration, validation, the canonical stage-shape
// contract, and the flat key=value config file format.

#include <array>
#include <cstdint>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

namespace mcafu {

struct ConfigError : std::runtime_error {
  explicit ConfigError(const std::string& m) : std::runtime_error(m) {}
};
struct DataError : std::runtime_error {
  explicit DataError(const std::string& m) : std::runtime_error(m) {}
};

enum class Variant { V0, V1 };
enum class BackboneScale { full, tiny };

struct AblationFlags {
  bool use_resnet_branch = true;
  bool use_coag = true;        // false: CoAG/CoAG* -> concat + 1x1 projection
  bool use_mambaconv = true;   // false: MambaConv -> plain double convolution
  bool use_coasmamba = true;   // false: fusion stage -> concat + proj + double conv
  bool use_coamamba = true;    // false: bottleneck removed (x_5 = x_4)
  bool use_doublelcoa = true;  // false: decoder block -> concat + double conv
};

struct ModelConfig {
  Variant variant = Variant::V1;
  BackboneScale scale = BackboneScale::full;
  int64_t input_size = 224;
  int64_t in_channels = 3;
  int64_t num_classes = 9;
  std::array<int64_t, 4> stage_channels = {64, 128, 256, 512};
  int64_t stem_channels = 32;
  int64_t bottleneck_pool = 14;
  int64_t ssm_state_dim = 16;
  int64_t ca_reduction = 16;
  AblationFlags ablation;
  uint64_t seed = 0;

  bool binary() const { return num_classes == 1; }
  /// Label-space class count (binary heads predict {0,1} with one channel).
  int64_t label_classes() const { return num_classes == 1 ? 2 : num_classes; }

  static ModelConfig full_v1(int64_t classes = 9) {
    ModelConfig c;
    c.num_classes = classes;
    return c;
  }
  static ModelConfig full_v0(int64_t classes = 9) {
    ModelConfig c;
    c.variant = Variant::V0;
    c.num_classes = classes;
    return c;
  }
  /// Desk-scale configuration: widths / 8, single-block backbone stages.
  static ModelConfig tiny(int64_t classes = 3, int64_t input = 64) {
    ModelConfig c;
    c.scale = BackboneScale::tiny;
    c.input_size = input;
    c.num_classes = classes;
    c.stage_channels = {8, 16, 32, 64};
    c.stem_channels = 4;
    c.bottleneck_pool = input / 16;
    c.ssm_state_dim = 8;
    c.ca_reduction = 2;
    return c;
  }

  std::array<int64_t, 4> transformer_channels() const {
    if (scale == BackboneScale::tiny) return {8, 16, 40, 64};
    return variant == Variant::V1 ? std::array<int64_t, 4>{64, 128, 320, 512}
                                  : std::array<int64_t, 4>{32, 64, 160, 256};
  }
  std::array<int64_t, 4> cnn_channels() const {
    if (scale == BackboneScale::tiny) return {8, 8, 16, 32};
    return {64, 64, 128, 256};
  }
};

struct ValidationResult {
  std::vector<std::string> violations;
  bool ok() const { return violations.empty(); }
  std::string joined() const {
    std::string s;
    for (const auto& v : violations) s += (s.empty() ? "" : "; ") + v;
    return s;
  }
};

inline ValidationResult validate_config(const ModelConfig& cfg) {
  ValidationResult r;
  auto fail = [&](const std::string& m) { r.violations.push_back(m); };
  if (cfg.input_size < 32 || cfg.input_size % 32 != 0)
    fail("input_size not divisible by 32");
  for (int i = 1; i < 4; ++i)
    if (cfg.stage_channels[i] <= cfg.stage_channels[i - 1]) {
      fail("stage_channels not strictly increasing");
      break;
    }
  if (cfg.in_channels < 1) fail("in_channels must be >= 1");
  if (cfg.num_classes < 1) fail("num_classes must be >= 1");
  if (cfg.stem_channels < 1) fail("stem_channels must be >= 1");
  if (cfg.ssm_state_dim < 1) fail("ssm_state_dim must be >= 1");
  if (cfg.input_size >= 32 && cfg.input_size % 32 == 0 &&
      cfg.bottleneck_pool != cfg.input_size / 16)
    fail("bottleneck_pool must equal input_size/16");
  // Channel-attention constructibility on every fusion stage.
  auto t = cfg.transformer_channels();
  std::array<int64_t, 5> xin = {cfg.stem_channels, cfg.stage_channels[0], cfg.stage_channels[1],
                                cfg.stage_channels[2], cfg.stage_channels[3]};
  for (int i = 0; i < 4; ++i) {
    int64_t cc = xin[i] + t[i];
    if (cc < cfg.ca_reduction || cc % cfg.ca_reduction != 0)
      fail("stage " + std::to_string(i + 1) + " concat width " + std::to_string(cc) +
           " incompatible with ca_reduction " + std::to_string(cfg.ca_reduction));
  }
  int64_t cb = cfg.stage_channels[2] + cfg.stage_channels[3];
  if (cb < cfg.ca_reduction || cb % cfg.ca_reduction != 0)
    fail("bottleneck concat width incompatible with ca_reduction");
  return r;
}

struct StageSpec {
  int stage_index = 0;
  int64_t resolution = 0;
  int64_t channels = 0;
  bool operator==(const StageSpec&) const = default;
};

/// Full named-tensor shape table (Table-1 contract, scaled to input_size).
inline std::vector<std::pair<std::string, StageSpec>> expected_shapes(const ModelConfig& cfg) {
  auto v = validate_config(cfg);
  if (!v.ok()) throw ConfigError("expected_shapes: invalid config: " + v.joined());
  int64_t s = cfg.input_size;
  auto t = cfg.transformer_channels();
  auto r = cfg.cnn_channels();
  const auto& x = cfg.stage_channels;
  std::vector<std::pair<std::string, StageSpec>> out;
  auto put = [&](const std::string& name, int idx, int64_t res, int64_t ch) {
    out.push_back({name, StageSpec{idx, res, ch}});
  };
  put("I", 0, s, cfg.in_channels);
  put("x_0", 0, s, cfg.stem_channels);
  put("x_0_pooled", 0, s / 2, cfg.stem_channels);  // stage-1 fusion input
  for (int i = 0; i < 4; ++i) put("t_" + std::to_string(i), i, s / (4 << i), t[i]);
  for (int i = 0; i < 4; ++i) put("r_" + std::to_string(i), i, s / (2 << i), r[i]);
  for (int i = 1; i <= 4; ++i) put("x_" + std::to_string(i), i, s / (1 << i), x[i - 1]);
  put("coamamba", 5, s / 8, x[3]);  // bottleneck output before AAP
  put("x_5", 5, s / 16, x[3]);
  // Decoder: d_i names follow the upsampling outputs; dl_i are block outputs.
  std::array<int64_t, 4> dres = {s / 8, s / 4, s / 2, s};
  std::array<int64_t, 4> dch = {x[2], x[1], x[0], cfg.stem_channels};
  put("d_4", 4, dres[0], x[3]);
  put("dl_1", 4, dres[0], dch[0]);
  put("d_3", 3, dres[1], dch[0]);
  put("dl_2", 3, dres[1], dch[1]);
  put("d_2", 2, dres[2], dch[1]);
  put("dl_3", 2, dres[2], dch[2]);
  put("d_1", 1, dres[3], dch[2]);
  put("d_0", 0, s, dch[3]);
  put("logits", 0, s, cfg.num_classes);
  return out;
}

// ---------------------------------------------------------------------------
// train configuration
// ---------------------------------------------------------------------------

enum class OptimizerKind { adamw, adam };

struct TrainConfig {
  ModelConfig model;
  double alpha = 0.6;  // weight on the Dice term
  int64_t batch_size = 8;
  double initial_lr = 1e-3;
  int64_t epochs = 10;
  OptimizerKind optimizer = OptimizerKind::adamw;
  double weight_decay = 1e-2;
  double restart_period = 2.0;  // cosine warm-restart period, in epochs
  uint64_t seed = 0;
  bool augment = true;
  bool deterministic = true;
  std::string precision = "f32";  // f32 | f64
  std::string train_manifest, val_manifest;
  std::string out_dir = "runs";
  std::string run_id;

  /// Per-dataset defaults mirroring the published training setups.
  static TrainConfig preset(const std::string& dataset) {
    TrainConfig c;
    if (dataset == "synapse") {
      c.initial_lr = 0.0025; c.batch_size = 18; c.alpha = 0.8; c.epochs = 100;
      c.model.num_classes = 9;
    } else if (dataset == "btcv") {
      c.initial_lr = 0.003; c.batch_size = 18; c.alpha = 0.6; c.epochs = 100;
      c.model.num_classes = 14;
    } else if (dataset == "acdc") {
      c.initial_lr = 0.01; c.batch_size = 12; c.alpha = 0.6; c.epochs = 400;
      c.model.num_classes = 4;
    } else if (dataset == "isic") {
      c.initial_lr = 0.01; c.batch_size = 6; c.alpha = 0.6; c.epochs = 100;
      c.model.num_classes = 1;
    } else if (dataset == "glas" || dataset == "monuseg") {
      c.initial_lr = 0.1; c.batch_size = 16; c.alpha = 0.5; c.epochs = 100;
      c.optimizer = OptimizerKind::adam; c.weight_decay = 0.0;
      c.model.num_classes = 1;
    } else {
      throw ConfigError("unknown dataset preset: " + dataset);
    }
    return c;
  }
};

// ---------------------------------------------------------------------------
// flat key = value config file
// ---------------------------------------------------------------------------

using KvMap = std::map<std::string, std::string>;

inline KvMap parse_kv_text(std::istream& in) {
  KvMap kv;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    auto hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    auto trim = [](std::string s) {
      size_t a = s.find_first_not_of(" \t\r");
      size_t b = s.find_last_not_of(" \t\r");
      return a == std::string::npos ? std::string() : s.substr(a, b - a + 1);
    };
    std::string t = trim(line);
    if (t.empty()) continue;
    auto eq = t.find('=');
    if (eq == std::string::npos)
      throw ConfigError("config line " + std::to_string(lineno) + ": expected key = value");
    kv[trim(t.substr(0, eq))] = trim(t.substr(eq + 1));
  }
  return kv;
}

inline KvMap load_kv_file(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw ConfigError("cannot open config file: " + path);
  return parse_kv_text(f);
}

namespace kv_detail {
inline bool parse_bool(const std::string& v, const std::string& key) {
  if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
  if (v == "false" || v == "0" || v == "no" || v == "off") return false;
  throw ConfigError("bad boolean for " + key + ": " + v);
}
inline int64_t parse_int(const std::string& v, const std::string& key) {
  try {
    size_t pos = 0;
    int64_t r = std::stoll(v, &pos);
    if (pos != v.size()) throw std::invalid_argument("");
    return r;
  } catch (...) {
    throw ConfigError("bad integer for " + key + ": " + v);
  }
}
inline double parse_double(const std::string& v, const std::string& key) {
  try {
    size_t pos = 0;
    double r = std::stod(v, &pos);
    if (pos != v.size()) throw std::invalid_argument("");
    return r;
  } catch (...) {
    throw ConfigError("bad number for " + key + ": " + v);
  }
}
}  // namespace kv_detail

/// Applies keys onto a TrainConfig (later sources win; CLI calls this again
/// with its overrides).
inline void apply_kv(TrainConfig& c, const KvMap& kv) {
  using namespace kv_detail;
  for (const auto& [k, v] : kv) {
    if (k == "model.variant") {
      if (v == "v0" || v == "V0") c.model.variant = Variant::V0;
      else if (v == "v1" || v == "V1") c.model.variant = Variant::V1;
      else throw ConfigError("bad model.variant: " + v);
    } else if (k == "model.scale") {
      if (v == "full") c.model.scale = BackboneScale::full;
      else if (v == "tiny") c.model.scale = BackboneScale::tiny;
      else throw ConfigError("bad model.scale: " + v);
    } else if (k == "model.input_size") c.model.input_size = parse_int(v, k);
    else if (k == "model.in_channels") c.model.in_channels = parse_int(v, k);
    else if (k == "model.num_classes") c.model.num_classes = parse_int(v, k);
    else if (k == "model.stem_channels") c.model.stem_channels = parse_int(v, k);
    else if (k == "model.bottleneck_pool") c.model.bottleneck_pool = parse_int(v, k);
    else if (k == "model.ssm_state_dim") c.model.ssm_state_dim = parse_int(v, k);
    else if (k == "model.ca_reduction") c.model.ca_reduction = parse_int(v, k);
    else if (k == "model.stage_channels") {
      std::istringstream ss(v);
      std::string tok;
      std::vector<int64_t> ch;
      while (std::getline(ss, tok, ',')) ch.push_back(parse_int(tok, k));
      if (ch.size() != 4) throw ConfigError("model.stage_channels needs 4 comma-separated counts");
      for (int i = 0; i < 4; ++i) c.model.stage_channels[i] = ch[i];
    } else if (k == "model.seed") c.model.seed = uint64_t(parse_int(v, k));
    else if (k == "model.ablation.use_resnet_branch") c.model.ablation.use_resnet_branch = parse_bool(v, k);
    else if (k == "model.ablation.use_coag") c.model.ablation.use_coag = parse_bool(v, k);
    else if (k == "model.ablation.use_mambaconv") c.model.ablation.use_mambaconv = parse_bool(v, k);
    else if (k == "model.ablation.use_coasmamba") c.model.ablation.use_coasmamba = parse_bool(v, k);
    else if (k == "model.ablation.use_coamamba") c.model.ablation.use_coamamba = parse_bool(v, k);
    else if (k == "model.ablation.use_doublelcoa") c.model.ablation.use_doublelcoa = parse_bool(v, k);
    else if (k == "train.alpha") c.alpha = parse_double(v, k);
    else if (k == "train.batch_size") c.batch_size = parse_int(v, k);
    else if (k == "train.lr") c.initial_lr = parse_double(v, k);
    else if (k == "train.epochs") c.epochs = parse_int(v, k);
    else if (k == "train.optimizer") {
      if (v == "adamw") c.optimizer = OptimizerKind::adamw;
      else if (v == "adam") c.optimizer = OptimizerKind::adam;
      else throw ConfigError("bad train.optimizer: " + v);
    } else if (k == "train.weight_decay") c.weight_decay = parse_double(v, k);
    else if (k == "train.restart_period") c.restart_period = parse_double(v, k);
    else if (k == "train.seed") c.seed = uint64_t(parse_int(v, k));
    else if (k == "train.augment") c.augment = parse_bool(v, k);
    else if (k == "train.deterministic") c.deterministic = parse_bool(v, k);
    else if (k == "train.precision") {
      if (v != "f32" && v != "f64") throw ConfigError("train.precision must be f32 or f64");
      c.precision = v;
    } else if (k == "data.train_manifest") c.train_manifest = v;
    else if (k == "data.val_manifest") c.val_manifest = v;
    else if (k == "out_dir") c.out_dir = v;
    else if (k == "run_id") c.run_id = v;
    else throw ConfigError("unknown config key: " + k);
  }
}

inline std::string dump_kv(const TrainConfig& c) {
  std::ostringstream os;
  os << "model.variant = " << (c.model.variant == Variant::V1 ? "v1" : "v0") << "\n";
  os << "model.scale = " << (c.model.scale == BackboneScale::tiny ? "tiny" : "full") << "\n";
  os << "model.input_size = " << c.model.input_size << "\n";
  os << "model.in_channels = " << c.model.in_channels << "\n";
  os << "model.num_classes = " << c.model.num_classes << "\n";
  os << "model.stage_channels = " << c.model.stage_channels[0] << "," << c.model.stage_channels[1]
     << "," << c.model.stage_channels[2] << "," << c.model.stage_channels[3] << "\n";
  os << "model.stem_channels = " << c.model.stem_channels << "\n";
  os << "model.bottleneck_pool = " << c.model.bottleneck_pool << "\n";
  os << "model.ssm_state_dim = " << c.model.ssm_state_dim << "\n";
  os << "model.ca_reduction = " << c.model.ca_reduction << "\n";
  os << "model.seed = " << c.model.seed << "\n";
  const auto& a = c.model.ablation;
  os << "model.ablation.use_resnet_branch = " << (a.use_resnet_branch ? "true" : "false") << "\n";
  os << "model.ablation.use_coag = " << (a.use_coag ? "true" : "false") << "\n";
  os << "model.ablation.use_mambaconv = " << (a.use_mambaconv ? "true" : "false") << "\n";
  os << "model.ablation.use_coasmamba = " << (a.use_coasmamba ? "true" : "false") << "\n";
  os << "model.ablation.use_coamamba = " << (a.use_coamamba ? "true" : "false") << "\n";
  os << "model.ablation.use_doublelcoa = " << (a.use_doublelcoa ? "true" : "false") << "\n";
  os << "train.alpha = " << c.alpha << "\n";
  os << "train.batch_size = " << c.batch_size << "\n";
  os << "train.lr = " << c.initial_lr << "\n";
  os << "train.epochs = " << c.epochs << "\n";
  os << "train.optimizer = " << (c.optimizer == OptimizerKind::adamw ? "adamw" : "adam") << "\n";
  os << "train.weight_decay = " << c.weight_decay << "\n";
  os << "train.restart_period = " << c.restart_period << "\n";
  os << "train.seed = " << c.seed << "\n";
  os << "train.augment = " << (c.augment ? "true" : "false") << "\n";
  os << "train.deterministic = " << (c.deterministic ? "true" : "false") << "\n";
  os << "train.precision = " << c.precision << "\n";
  if (!c.train_manifest.empty()) os << "data.train_manifest = " << c.train_manifest << "\n";
  if (!c.val_manifest.empty()) os << "data.val_manifest = " << c.val_manifest << "\n";
  os << "out_dir = " << c.out_dir << "\n";
  if (!c.run_id.empty()) os << "run_id = " << c.run_id << "\n";
  return os.str();
}

}  // namespace mcafu
