// Command-line harness: train, evaluate, ablate, count parameters/FLOPs,
// generate synthetic data, and aggregate run reports.
//
// Exit codes: 0 success, 2 configuration error, 3 data error, 4 numeric
// failure.

#include <CLI11.hpp>
#include <json.hpp>

#include <filesystem>
#include <iostream>

#include "mcafu/analysis.hpp"
#include "mcafu/trainer.hpp"

namespace fs = std::filesystem;
using namespace mcafu;
using nlohmann::json;

namespace {

struct CommonOpts {
  std::string config_file;
  std::vector<std::string> sets;
  std::string out_dir;
  std::string run_id;
  int64_t seed = -1;
  bool deterministic = false;
  std::string device = "cpu";
  bool check_finite = false;
  std::string diag_file;
};

void add_common(CLI::App* cmd, CommonOpts& o) {
  cmd->add_option("--config", o.config_file, "flat key = value config file");
  cmd->add_option("--set", o.sets, "config override, key=value (repeatable; wins over --config)");
  cmd->add_option("--out-dir", o.out_dir, "artifact root directory");
  cmd->add_option("--run-id", o.run_id, "run directory name under --out-dir");
  cmd->add_option("--seed", o.seed, "seed override for model init, shuffling and augmentation");
  cmd->add_flag("--deterministic", o.deterministic,
                "deterministic mode (single-threaded execution is always deterministic; "
                "the flag pins it in the config snapshot)");
  cmd->add_option("--device", o.device, "compute device (cpu only)");
  cmd->add_flag("--check-finite", o.check_finite, "verify block outputs are finite (debug)");
  cmd->add_option("--diag", o.diag_file, "write per-stage tensor statistics to this file");
}

TrainConfig build_config(const CommonOpts& o, const std::string& preset = "") {
  TrainConfig cfg = preset.empty() ? TrainConfig{} : TrainConfig::preset(preset);
  if (!o.config_file.empty()) apply_kv(cfg, load_kv_file(o.config_file));
  KvMap overrides;
  for (const auto& s : o.sets) {
    auto eq = s.find('=');
    if (eq == std::string::npos) throw ConfigError("--set expects key=value, got: " + s);
    overrides[s.substr(0, eq)] = s.substr(eq + 1);
  }
  apply_kv(cfg, overrides);
  if (o.seed >= 0) {
    cfg.seed = uint64_t(o.seed);
    cfg.model.seed = uint64_t(o.seed);
  }
  if (!o.out_dir.empty()) cfg.out_dir = o.out_dir;
  if (!o.run_id.empty()) cfg.run_id = o.run_id;
  if (o.deterministic) cfg.deterministic = true;
  if (o.device != "cpu") throw ConfigError("unsupported device: " + o.device + " (cpu only)");
  if (o.check_finite) finite_checks_enabled() = true;
  auto v = validate_config(cfg.model);
  if (!v.ok()) throw ConfigError("invalid model config: " + v.joined());
  return cfg;
}

Ctx make_ctx(const CommonOpts& o, std::ofstream& diag_stream) {
  Ctx ctx;
  if (!o.diag_file.empty()) {
    diag_stream.open(o.diag_file);
    if (!diag_stream) throw DataError("cannot open diag file: " + o.diag_file);
    ctx.diag = [&diag_stream](const std::string& name, const Shape& s, double mn, double mx,
                              double mean) {
      diag_stream << name << "\tshape=" << shape_str(s) << "\tmin=" << mn << "\tmax=" << mx
                  << "\tmean=" << mean << "\n";
    };
  }
  return ctx;
}

std::vector<SampleRecord> load_required(const std::string& manifest, const char* what) {
  if (manifest.empty()) throw ConfigError(std::string("missing ") + what + " manifest path");
  auto data = load_dataset(load_manifest(manifest));
  if (data.empty()) throw DataError(std::string(what) + " manifest is empty: " + manifest);
  return data;
}

void write_run_summary(const std::string& run_dir, const RunArtifacts& art) {
  std::ofstream f(run_dir + "/run_summary.json");
  f.precision(10);
  f << "{\n  \"steps\": " << art.steps << ",\n  \"final_train_dsc\": " << art.final_train_dsc
    << ",\n  \"best_val_dsc\": " << art.best_val_dsc << "\n}\n";
}

template <typename T>
int run_train(const CommonOpts& opts, TrainConfig& cfg, const std::string& init_weights,
              bool allow_partial) {
  auto train_data = load_required(cfg.train_manifest, "train");
  std::vector<SampleRecord> val_data;
  if (!cfg.val_manifest.empty()) val_data = load_dataset(load_manifest(cfg.val_manifest));

  MambaCafuNet<T> net(cfg.model);
  if (!init_weights.empty()) {
    auto rep = load_into(net.params(), Archive::load(init_weights), allow_partial);
    std::cout << "loaded " << rep.matched << " arrays from " << init_weights;
    if (rep.missing) std::cout << " (" << rep.missing << " missing)";
    std::cout << "\n";
  }
  auto art = train_model(net, cfg, train_data, val_data, std::cout);
  write_run_summary(art.run_dir, art);
  if (!val_data.empty()) {
    auto ev = evaluate_model(net, val_data, cfg.batch_size);
    write_metrics_files(ev, cfg.model.label_classes(), art.run_dir, "metrics_val");
  }
  std::cout << "run dir: " << art.run_dir << "\n";
  std::cout << "steps: " << art.steps << "  final train DSC: " << art.final_train_dsc;
  if (art.best_val_dsc >= 0) std::cout << "  best val DSC: " << art.best_val_dsc;
  std::cout << "\ncheckpoints: " << art.last_checkpoint << "\n";
  (void)opts;
  return 0;
}

template <typename T>
int run_eval(const CommonOpts& opts, TrainConfig& cfg, const std::string& checkpoint,
             const std::string& manifest, bool save_masks) {
  auto data = load_required(manifest, "evaluation");
  MambaCafuNet<T> net(cfg.model);
  auto rep = load_into(net.params(), Archive::load(checkpoint));
  std::cout << "restored " << rep.matched << " arrays from " << checkpoint << "\n";
  std::string dir = cfg.out_dir + (cfg.run_id.empty() ? "" : "/" + cfg.run_id);
  fs::create_directories(dir);
  std::ofstream diag_stream;
  Ctx ctx = make_ctx(opts, diag_stream);
  if (ctx.diag) {  // one diagnostic pass over the first sample
    NoGradGuard ng;
    std::vector<const SampleRecord*> one = {&data[0]};
    net.forward(Var<T>(batch_images<T>(one)), ctx);
  }
  auto ev = evaluate_model(net, data, cfg.batch_size, save_masks ? dir : "");
  write_metrics_files(ev, cfg.model.label_classes(), dir, "metrics");
  std::cout << "samples: " << ev.samples.size() << "  cases: " << ev.cases.size() << "\n";
  std::cout << "mean DSC " << ev.overall.mean_dsc << "  mean IoU " << ev.overall.mean_iou
            << "  accuracy " << ev.overall.accuracy << "  mean HD95 ";
  if (ev.overall.mean_hd95) std::cout << *ev.overall.mean_hd95;
  else std::cout << "n/a";
  std::cout << "\nmetrics written under " << dir << "\n";
  return 0;
}

template <typename T>
int run_ablate(TrainConfig& base, const std::string& plan) {
  auto variants = ablation_plan(plan);
  auto train_data = load_required(base.train_manifest, "train");
  std::vector<SampleRecord> val_data;
  if (!base.val_manifest.empty()) val_data = load_dataset(load_manifest(base.val_manifest));
  const auto& score_set = val_data.empty() ? train_data : val_data;

  std::string root = base.out_dir + (base.run_id.empty() ? "/ablation" : "/" + base.run_id);
  fs::create_directories(root);
  std::ofstream csv(root + "/ablation_report.csv");
  csv << "variant,resb,coag,mambaconv,coasmamba,coamamba,doublelcoa,dsc\n";
  std::cout << "variant                        flags                                                DSC\n";
  for (const auto& v : variants) {
    TrainConfig cfg = base;
    cfg.model.ablation = v.flags;
    cfg.out_dir = root;
    cfg.run_id = v.name;
    MambaCafuNet<T> net(cfg.model);
    auto art = train_model(net, cfg, train_data, val_data, std::cout);
    write_run_summary(art.run_dir, art);
    auto ev = evaluate_model(net, score_set, cfg.batch_size);
    write_metrics_files(ev, cfg.model.label_classes(), art.run_dir,
                        val_data.empty() ? "metrics_train" : "metrics_val");
    double dscv = ev.overall.mean_dsc;
    const auto& f = v.flags;
    csv << v.name << "," << f.use_resnet_branch << "," << f.use_coag << "," << f.use_mambaconv
        << "," << f.use_coasmamba << "," << f.use_coamamba << "," << f.use_doublelcoa << ","
        << dscv << "\n";
    std::cout.width(30);
    std::cout << std::left << v.name << " " << flags_str(v.flags) << "  " << dscv << "\n";
  }
  std::cout << "report: " << root << "/ablation_report.csv\n";
  return 0;
}

int run_count(TrainConfig& cfg, const std::string& json_out) {
  auto rep = count_params_flops<float>(cfg.model);
  std::cout << complexity_table(rep);
  if (rep.param_count != rep.expected_param_count)
    throw NumericError("parameter traversals disagree: " + std::to_string(rep.param_count) +
                       " vs " + std::to_string(rep.expected_param_count));
  if (!json_out.empty()) {
    json j;
    j["params"] = rep.param_count;
    j["params_m"] = rep.params_m();
    j["gmacs"] = rep.gmacs();
    for (const auto& [k, v] : rep.macs_by_scope) j["macs_by_block"][k] = v;
    for (const auto& [k, v] : rep.macs_by_kind) j["macs_by_kind"][k] = v;
    std::ofstream f(json_out);
    f << j.dump(2) << "\n";
    std::cout << "written: " << json_out << "\n";
  }
  return 0;
}

int run_report(const std::vector<std::string>& run_dirs, const std::string& out,
               const std::string& manifest, bool overlays) {
  std::ofstream csv(out);
  csv << "run,steps,final_train_dsc,best_val_dsc,val_mean_dsc,val_mean_iou,val_accuracy,val_mean_hd95\n";
  std::cout << "run                            train_dsc  val_dsc\n";
  DatasetManifest man;
  std::map<std::string, std::string> image_by_id;
  if (!manifest.empty()) {
    man = load_manifest(manifest);
    for (const auto& e : man.entries)
      image_by_id[fs::path(e.image_path).stem().string()] = resolve_path(man, e.image_path);
  }
  for (const auto& dir : run_dirs) {
    if (!fs::exists(dir + "/run_summary.json") && !fs::exists(dir + "/metrics_summary.json")) {
      std::cout << dir << ": missing artifacts (run_summary.json), skipped\n";
      continue;
    }
    json summary, metrics;
    if (fs::exists(dir + "/run_summary.json")) {
      std::ifstream f(dir + "/run_summary.json");
      f >> summary;
    }
    for (const char* stem : {"metrics_val_summary.json", "metrics_summary.json",
                             "metrics_train_summary.json"}) {
      if (fs::exists(dir + "/" + stem)) {
        std::ifstream f(dir + "/" + stem);
        f >> metrics;
        break;
      }
    }
    auto get = [](const json& j, const char* k) {
      return j.contains(k) && j[k].is_number() ? j[k].get<double>() : std::nan("");
    };
    csv << fs::path(dir).filename().string() << "," << (summary.contains("steps") ? summary["steps"].get<int64_t>() : -1)
        << "," << get(summary, "final_train_dsc") << "," << get(summary, "best_val_dsc") << ","
        << get(metrics, "mean_dsc") << "," << get(metrics, "mean_iou") << ","
        << get(metrics, "accuracy") << "," << get(metrics, "mean_hd95") << "\n";
    std::cout.width(30);
    std::cout << std::left << fs::path(dir).filename().string() << " "
              << get(summary, "final_train_dsc") << "  " << get(metrics, "mean_dsc") << "\n";

    if (overlays && !image_by_id.empty()) {
      // prediction boundary over the input, one color per class
      static const uint16_t palette[6][3] = {{255, 64, 64},  {64, 255, 64},  {64, 64, 255},
                                             {255, 255, 64}, {255, 64, 255}, {64, 255, 255}};
      for (const auto& entry : fs::directory_iterator(dir)) {
        auto name = entry.path().filename().string();
        if (name.rfind("pred_", 0) != 0 || entry.path().extension() != ".pgm") continue;
        std::string id = name.substr(5, name.size() - 9);
        auto it = image_by_id.find(id);
        if (it == image_by_id.end()) continue;
        auto img = read_pnm(it->second);
        auto pred = read_pnm(entry.path().string());
        RasterImage over;
        over.h = img.h;
        over.w = img.w;
        over.c = 3;
        over.maxval = 255;
        over.px.resize(size_t(img.h * img.w * 3));
        for (int64_t y = 0; y < img.h; ++y)
          for (int64_t x = 0; x < img.w; ++x) {
            double scale = 255.0 / double(img.maxval);
            for (int64_t ch = 0; ch < 3; ++ch)
              over.at(y, x, ch) =
                  uint16_t(img.at(y, x, img.c == 3 ? ch : 0) * scale);
            int32_t cls = int32_t(pred.at(y, x, 0));
            if (cls == 0) continue;
            bool edge = y == 0 || x == 0 || y == img.h - 1 || x == img.w - 1;
            if (!edge)
              edge = pred.at(y - 1, x, 0) != cls || pred.at(y + 1, x, 0) != cls ||
                     pred.at(y, x - 1, 0) != cls || pred.at(y, x + 1, 0) != cls;
            if (edge)
              for (int64_t ch = 0; ch < 3; ++ch)
                over.at(y, x, ch) = palette[(cls - 1) % 6][ch];
          }
        write_pnm(dir + "/overlay_" + id + ".ppm", over);
      }
    }
  }
  std::cout << "summary: " << out << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"MambaCAFU segmentation: training, evaluation and analysis harness"};
  app.require_subcommand(1);

  CommonOpts opts;
  std::string preset, init_weights, checkpoint, manifest, plan = "all", json_out;
  std::string report_out = "report.csv", report_manifest;
  bool allow_partial = false, save_masks = false, overlays = false;
  std::vector<std::string> run_dirs;

  SynthOptions synth_opt;
  std::string synth_dir = "synth_data";

  auto* train_cmd = app.add_subcommand("train", "train a model from a config");
  add_common(train_cmd, opts);
  train_cmd->add_option("--preset", preset, "dataset preset: synapse|btcv|acdc|isic|glas|monuseg");
  train_cmd->add_option("--train-manifest", manifest, "training manifest (overrides config)");
  train_cmd->add_option("--init-weights", init_weights, "named-array archive with initial weights");
  train_cmd->add_flag("--allow-partial", allow_partial, "accept weight files that cover a subset");

  auto* eval_cmd = app.add_subcommand("eval", "evaluate a checkpoint against a manifest");
  add_common(eval_cmd, opts);
  eval_cmd->add_option("--checkpoint", checkpoint, "checkpoint archive")->required();
  eval_cmd->add_option("--manifest", manifest, "evaluation manifest")->required();
  eval_cmd->add_flag("--save-masks", save_masks, "write predicted label maps (PGM)");

  auto* ablate_cmd = app.add_subcommand("ablate", "run the canonical ablation variants");
  add_common(ablate_cmd, opts);
  ablate_cmd->add_option("--plan", plan, "table6 | table7 | all | <variant name>");

  auto* count_cmd = app.add_subcommand("count", "count parameters and FLOPs");
  add_common(count_cmd, opts);
  count_cmd->add_option("--json", json_out, "also write a JSON breakdown");

  auto* synth_cmd = app.add_subcommand("synth", "generate a synthetic shapes dataset");
  synth_cmd->add_option("--out", synth_dir, "output directory");
  synth_cmd->add_option("--n", synth_opt.n, "number of samples");
  synth_cmd->add_option("--size", synth_opt.size, "image size (multiple of 32)");
  synth_cmd->add_option("--classes", synth_opt.num_classes, "label count incl. background");
  synth_cmd->add_option("--seed", synth_opt.seed, "generator seed");
  synth_cmd->add_option("--noise", synth_opt.noise_sigma, "gaussian intensity noise sigma");
  synth_cmd->add_option("--case-group", synth_opt.case_group, "samples per case id");

  auto* report_cmd = app.add_subcommand("report", "aggregate run directories into a summary");
  report_cmd->add_option("runs", run_dirs, "run directories")->required();
  report_cmd->add_option("--out", report_out, "summary CSV path");
  report_cmd->add_option("--manifest", report_manifest, "dataset manifest (for overlays)");
  report_cmd->add_flag("--overlays", overlays, "render prediction-boundary overlays");

  CLI11_PARSE(app, argc, argv);

  try {
    if (app.got_subcommand(synth_cmd)) {
      auto man = synth_generate(synth_dir, synth_opt);
      std::cout << "wrote " << man.entries.size() << " samples under " << synth_dir << "\n";
      std::cout << "manifest: " << synth_dir << "/manifest.tsv\n";
      return 0;
    }
    if (app.got_subcommand(report_cmd))
      return run_report(run_dirs, report_out, report_manifest, overlays);

    TrainConfig cfg = build_config(opts, preset);
    if (app.got_subcommand(count_cmd)) return run_count(cfg, json_out);

    if (app.got_subcommand(train_cmd)) {
      if (!manifest.empty()) cfg.train_manifest = manifest;
      return cfg.precision == "f64" ? run_train<double>(opts, cfg, init_weights, allow_partial)
                                    : run_train<float>(opts, cfg, init_weights, allow_partial);
    }
    if (app.got_subcommand(eval_cmd)) {
      return cfg.precision == "f64" ? run_eval<double>(opts, cfg, checkpoint, manifest, save_masks)
                                    : run_eval<float>(opts, cfg, checkpoint, manifest, save_masks);
    }
    if (app.got_subcommand(ablate_cmd)) {
      return cfg.precision == "f64" ? run_ablate<double>(cfg, plan) : run_ablate<float>(cfg, plan);
    }
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const DataError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return 3;
  } catch (const ShapeError& e) {
    std::cerr << "shape error: " << e.what() << "\n";
    return 4;
  } catch (const NumericError& e) {
    std::cerr << "numeric error: " << e.what() << "\n";
    return 4;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
