#pragma once

// Config-driven training and evaluation loops, plus the canonical ablation
// variants. One run directory per invocation holding the config snapshot,
// step log, checkpoints and metric tables.

#include <filesystem>
#include <iostream>

#include "mcafu/checkpoint.hpp"
#include "mcafu/losses.hpp"
#include "mcafu/model.hpp"
#include "mcafu/optim.hpp"
#include "mcafu/synth.hpp"

namespace mcafu {

struct RunArtifacts {
  std::string run_dir;
  std::string last_checkpoint, best_checkpoint;
  double final_train_dsc = -1, best_val_dsc = -1;
  int64_t steps = 0;
};

template <typename T>
Tensor<T> batch_images(const std::vector<const SampleRecord*>& recs) {
  int64_t n = int64_t(recs.size());
  const auto& s = recs[0]->image.shape();
  Tensor<T> out{{n, s[0], s[1], s[2]}};
  for (int64_t i = 0; i < n; ++i) {
    const auto& img = recs[i]->image;
    if (img.shape() != s) throw DataError("batch: inconsistent image shapes");
    T* dst = out.data() + i * img.numel();
    for (int64_t j = 0; j < img.numel(); ++j) dst[j] = T(img[j]);
  }
  return out;
}

inline Tensor<int32_t> batch_masks(const std::vector<const SampleRecord*>& recs) {
  int64_t n = int64_t(recs.size());
  const auto& s = recs[0]->mask.shape();
  Tensor<int32_t> out{{n, s[0], s[1]}};
  for (int64_t i = 0; i < n; ++i) {
    const auto& m = recs[i]->mask;
    std::memcpy(out.data() + i * m.numel(), m.data(), size_t(m.numel()) * sizeof(int32_t));
  }
  return out;
}

/// Argmax (or thresholded sigmoid) label map for one batch entry.
template <typename T>
LabelMap predict_labels(const Tensor<T>& logits, int64_t n) {
  int64_t C = logits.shape()[1], H = logits.shape()[2], W = logits.shape()[3];
  LabelMap out{{H, W}};
  if (C == 1) {
    for (int64_t i = 0; i < H * W; ++i)
      out[i] = logits[(n * C) * H * W + i] > T(0) ? 1 : 0;
    return out;
  }
  for (int64_t i = 0; i < H * W; ++i) {
    int32_t best = 0;
    T bv = logits[(n * C) * H * W + i];
    for (int64_t c = 1; c < C; ++c) {
      T v = logits[(n * C + c) * H * W + i];
      if (v > bv) { bv = v; best = int32_t(c); }
    }
    out[i] = best;
  }
  return out;
}

template <typename T>
struct EvalResult {
  std::vector<MetricsReport> samples;
  std::vector<MetricsReport> cases;
  MetricsReport overall;  // mean over cases
};

/// Runs the model over a dataset in eval mode and scores every sample.
/// When `save_masks_dir` is set, predicted label maps are written as PGM.
template <typename T>
EvalResult<T> evaluate_model(MambaCafuNet<T>& net, const std::vector<SampleRecord>& data,
                             int64_t batch_size, const std::string& save_masks_dir = "") {
  EvalResult<T> res;
  Ctx ctx;  // eval mode
  NoGradGuard ng;
  int64_t label_classes = net.config().label_classes();
  for (size_t off = 0; off < data.size(); off += size_t(batch_size)) {
    std::vector<const SampleRecord*> recs;
    for (size_t i = off; i < std::min(data.size(), off + size_t(batch_size)); ++i)
      recs.push_back(&data[i]);
    auto imgs = batch_images<T>(recs);
    auto logits = net.forward(Var<T>(imgs), ctx);
    for (size_t i = 0; i < recs.size(); ++i) {
      auto pred = predict_labels(logits.val(), int64_t(i));
      Spacing sp = recs[i]->spacing.value_or(Spacing{});
      res.samples.push_back(
          evaluate_sample(pred, recs[i]->mask, label_classes, sp, recs[i]->id, recs[i]->case_id));
      if (!save_masks_dir.empty()) {
        RasterImage out;
        out.h = pred.shape()[0];
        out.w = pred.shape()[1];
        out.c = 1;
        out.maxval = 255;
        out.px.resize(size_t(out.h * out.w));
        for (int64_t p = 0; p < pred.numel(); ++p) out.px[size_t(p)] = uint16_t(pred[p]);
        write_pnm(save_masks_dir + "/pred_" + recs[i]->id + ".pgm", out);
      }
    }
  }
  // case-level aggregation (slice mean within each case)
  std::map<std::string, std::vector<MetricsReport>> by_case;
  for (const auto& r : res.samples) by_case[r.case_id].push_back(r);
  for (const auto& [cid, rs] : by_case) {
    auto agg = aggregate_reports(rs, cid);
    agg.case_id = cid;
    res.cases.push_back(agg);
  }
  res.overall = aggregate_reports(res.cases, "overall");
  return res;
}

template <typename T>
void write_metrics_files(const EvalResult<T>& res, int64_t label_classes,
                         const std::string& dir, const std::string& stem) {
  std::ofstream cs(dir + "/" + stem + "_samples.csv");
  cs << csv_header(label_classes) << "\n";
  for (const auto& r : res.samples) cs << csv_row(r, label_classes) << "\n";
  std::ofstream cc(dir + "/" + stem + "_cases.csv");
  cc << csv_header(label_classes) << "\n";
  for (const auto& r : res.cases) cc << csv_row(r, label_classes) << "\n";

  // flat JSON-like record for the summary
  std::ofstream js(dir + "/" + stem + "_summary.json");
  js.precision(10);
  js << "{\n  \"mean_dsc\": " << res.overall.mean_dsc << ",\n  \"mean_iou\": "
     << res.overall.mean_iou << ",\n  \"accuracy\": " << res.overall.accuracy
     << ",\n  \"mean_hd95\": ";
  if (res.overall.mean_hd95) js << *res.overall.mean_hd95;
  else js << "null";
  js << ",\n  \"hd95_mode\": \"per_slice_2d\",\n  \"conventions\": "
     << "\"dsc/iou: both-empty=1; hd95: one-empty=skipped, both-empty=0; "
     << "means over foreground classes\",\n  \"cases\": " << res.cases.size()
     << ",\n  \"samples\": " << res.samples.size() << ",\n  \"per_class\": {";
  bool first = true;
  for (const auto& [c, m] : res.overall.per_class) {
    js << (first ? "" : ",") << "\n    \"" << c << "\": {\"dsc\": " << m.dsc
       << ", \"iou\": " << m.iou << ", \"hd95\": ";
    if (m.hd95) js << *m.hd95;
    else js << "null";
    js << "}";
    first = false;
  }
  js << "\n  }\n}\n";
}

template <typename T>
RunArtifacts train_model(MambaCafuNet<T>& net, const TrainConfig& cfg,
                         const std::vector<SampleRecord>& train_data,
                         const std::vector<SampleRecord>& val_data, std::ostream& log) {
  if (train_data.empty()) throw DataError("train: empty training set");
  RunArtifacts art;
  art.run_dir = cfg.out_dir + (cfg.run_id.empty() ? "" : "/" + cfg.run_id);
  std::filesystem::create_directories(art.run_dir);
  {
    std::ofstream snap(art.run_dir + "/config.txt");
    snap << dump_kv(cfg);
  }
  std::ofstream step_log(art.run_dir + "/train_log.csv");
  step_log << "step,epoch_pos,lr,loss\n";
  step_log.precision(10);

  AdamW<T> opt(net.params(), cfg.initial_lr, cfg.weight_decay,
               cfg.optimizer == OptimizerKind::adamw);
  Ctx train_ctx;
  train_ctx.training = true;

  int64_t n = int64_t(train_data.size());
  int64_t batches = (n + cfg.batch_size - 1) / cfg.batch_size;
  int64_t step = 0;
  auto save = [&](const std::string& name, int64_t at_step) {
    auto arch = checkpoint_archive(net.params(), dump_kv(cfg), cfg.seed, at_step);
    std::string path = art.run_dir + "/" + name;
    arch.save(path);
    return path;
  };

  for (int64_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    // deterministic shuffle per epoch
    std::vector<int64_t> order(static_cast<size_t>(n));
    for (int64_t i = 0; i < n; ++i) order[size_t(i)] = i;
    Rng shuffle_rng(mix_seed(cfg.seed, 0x5u + uint64_t(epoch)));
    for (int64_t i = n - 1; i > 0; --i)
      std::swap(order[size_t(i)], order[size_t(shuffle_rng.uniform_int(0, i))]);

    for (int64_t b = 0; b < batches; ++b) {
      double epoch_pos = double(epoch) + double(b) / double(batches);
      double lr = cosine_warm_restart_lr(cfg.initial_lr, epoch_pos, cfg.restart_period);
      opt.set_lr(lr);

      std::vector<SampleRecord> augmented;
      std::vector<const SampleRecord*> recs;
      for (int64_t i = b * cfg.batch_size; i < std::min(n, (b + 1) * cfg.batch_size); ++i) {
        const auto& rec = train_data[size_t(order[size_t(i)])];
        if (cfg.augment) {
          Rng arng(mix_seed(cfg.seed, 0xa0000u + uint64_t(epoch) * 131071u +
                                          uint64_t(order[size_t(i)])));
          augmented.push_back(augment(rec, arng));
        } else {
          augmented.push_back(rec);
        }
      }
      for (const auto& r : augmented) recs.push_back(&r);

      auto imgs = batch_images<T>(recs);
      auto masks = batch_masks(recs);
      opt.zero_grad();
      auto logits = net.forward(Var<T>(imgs), train_ctx);
      auto loss = combined_loss(logits, masks, cfg.alpha);
      double loss_v = double(loss.val()[0]);
      if (!std::isfinite(loss_v)) {
        log << "[abort] non-finite loss at step " << step << "; batch statistics:\n";
        for (const auto* r : recs) {
          double mn = r->image[0], mx = r->image[0];
          for (int64_t i = 0; i < r->image.numel(); ++i) {
            mn = std::min(mn, double(r->image[i]));
            mx = std::max(mx, double(r->image[i]));
          }
          log << "  sample " << r->id << " image range [" << mn << ", " << mx << "]\n";
        }
        throw NumericError("training loss became non-finite at step " + std::to_string(step));
      }
      backward(loss);
      opt.step();
      step_log << step << "," << epoch_pos << "," << lr << "," << loss_v << "\n";
      ++step;
    }

    if (!val_data.empty()) {
      auto ev = evaluate_model(net, val_data, cfg.batch_size);
      double dsc_now = ev.overall.mean_dsc;
      log << "epoch " << epoch << " val mean foreground DSC " << dsc_now << "\n";
      if (dsc_now > art.best_val_dsc) {
        art.best_val_dsc = dsc_now;
        art.best_checkpoint = save("checkpoint_best.mcafu", step);
      }
    }
  }
  art.steps = step;
  art.last_checkpoint = save("checkpoint_last.mcafu", step);
  if (art.best_checkpoint.empty()) art.best_checkpoint = art.last_checkpoint;
  {
    auto ev = evaluate_model(net, train_data, cfg.batch_size);
    art.final_train_dsc = ev.overall.mean_dsc;
  }
  return art;
}

// ---------------------------------------------------------------------------
// canonical ablation variants
// ---------------------------------------------------------------------------

struct AblationVariant {
  std::string name;
  AblationFlags flags;
};

inline std::vector<AblationVariant> ablation_plan(const std::string& plan) {
  auto t6 = [](bool resb, bool coag, bool mamba) {
    AblationFlags f;
    f.use_resnet_branch = resb;
    f.use_coag = coag;
    f.use_mambaconv = mamba;
    return f;
  };
  auto t7 = [](bool coas, bool coam, bool dl) {
    AblationFlags f;
    f.use_coasmamba = coas;
    f.use_coamamba = coam;
    f.use_doublelcoa = dl;
    return f;
  };
  std::vector<AblationVariant> table6 = {
      {"t6_baseline", t6(false, false, false)},
      {"t6_wo_mambaconv", t6(true, true, false)},
      {"t6_wo_resbranch", t6(false, true, true)},
      {"t6_wo_coag", t6(true, false, true)},
      {"t6_full", AblationFlags{}},
  };
  std::vector<AblationVariant> table7 = {
      {"t7_baseline", t7(false, false, false)},
      {"t7_add_coasmamba", t7(true, false, false)},
      {"t7_add_coasmamba_coamamba", t7(true, true, false)},
      {"t7_full", AblationFlags{}},
  };
  if (plan == "table6") return table6;
  if (plan == "table7") return table7;
  if (plan == "all") {
    auto all = table6;
    all.insert(all.end(), table7.begin(), table7.end());
    return all;
  }
  // single named variant
  for (const auto& v : table6)
    if (v.name == plan) return {v};
  for (const auto& v : table7)
    if (v.name == plan) return {v};
  throw ConfigError("unknown ablation plan or variant: " + plan);
}

inline std::string flags_str(const AblationFlags& f) {
  auto b = [](bool v) { return v ? "1" : "0"; };
  std::string s;
  s += std::string("resb=") + b(f.use_resnet_branch) + " coag=" + b(f.use_coag) +
       " mambaconv=" + b(f.use_mambaconv) + " coasmamba=" + b(f.use_coasmamba) +
       " coamamba=" + b(f.use_coamamba) + " doublelcoa=" + b(f.use_doublelcoa);
  return s;
}

}  // namespace mcafu
