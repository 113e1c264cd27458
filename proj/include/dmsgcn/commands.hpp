#pragma once

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "dmsgcn/checkpoint.hpp"
#include "dmsgcn/data.hpp"
#include "dmsgcn/gradcheck_suite.hpp"
#include "dmsgcn/hierarchy_config.hpp"
#include "dmsgcn/metrics.hpp"
#include "dmsgcn/model.hpp"
#include "dmsgcn/render.hpp"
#include "dmsgcn/train.hpp"

// Command implementations behind the dmsgcn tool. Each takes a fully resolved
// RunConfig; argument parsing lives in the tool itself.

namespace dmsgcn {

struct RunConfig {
  ModelConfig model;
  TrainConfig train;                         // train.out_dir is the run directory
  std::filesystem::path skeleton_config;     // empty = built-in 22/10/5 hierarchy and 32->22 selection

  std::string data = "synthetic";            // synthetic | csv
  std::vector<std::filesystem::path> train_csv, val_csv, test_csv;
  bool csv_header = false;
  std::filesystem::path action_manifest;
  bool center = false;
  double fps = 25.0;
  std::size_t train_stride = 1;
  std::size_t test_stride = 1;
  std::size_t max_train_windows = 0;         // 0 = no limit

  // Train, val and test sequences use seeds synthetic_seed + i, + 400 + i, + 800 + i.
  std::uint64_t synthetic_seed = 100;
  std::size_t synthetic_train_sequences = 8;
  std::size_t synthetic_val_sequences = 0;
  std::size_t synthetic_test_sequences = 4;
  std::size_t synthetic_frames = 108;
  std::optional<std::uint64_t> synthetic_rest_seed = 1;  // shared rest pose; none = per-sequence offsets

  std::filesystem::path checkpoint;          // empty = <out_dir>/final
  std::filesystem::path input;
  std::filesystem::path output;
  std::vector<std::size_t> render_frames;    // empty = every frame
  std::string render_prefix = "frame";
  std::uint64_t gradcheck_seed = 0;
  bool gradcheck_model = true;
  bool inject_fault = false;
  std::size_t ablate_epochs = 1;
};

enum class Split { train, val, test };

inline SkeletonConfig resolve_skeleton(const RunConfig& cfg) {
  return cfg.skeleton_config.empty() ? default_skeleton_config() : load_skeleton_config(cfg.skeleton_config);
}

inline ModelConfig resolve_model_config(const RunConfig& cfg, const SkeletonConfig& skel) {
  ModelConfig m = cfg.model;
  m.hierarchy = skel.hierarchy;
  m.validate();
  return m;
}

inline std::vector<MotionSequence> synthetic_split(std::uint64_t first_seed, std::size_t count, std::size_t frames,
                                                   std::size_t joints, double fps,
                                                   std::optional<std::uint64_t> rest_seed) {
  std::vector<MotionSequence> out;
  for (std::size_t i = 0; i < count; ++i) {
    SyntheticSpec spec;
    spec.seed = first_seed + i;
    spec.joints = joints;
    spec.frames = frames;
    spec.fps = fps;
    spec.rest_pose_seed = rest_seed;
    out.push_back(synth_generate(spec));
  }
  return out;
}

/// Brings sequences to the model's joint set: kept as is when V matches,
/// reduced through the skeleton's selection list when it covers the file.
inline std::vector<MotionSequence> prepare_sequences(std::vector<MotionSequence> seqs, const RunConfig& cfg,
                                                     const SkeletonConfig& skel) {
  const std::size_t v = skel.hierarchy.skeleton(0).size();
  for (MotionSequence& seq : seqs) {
    seq.fps = cfg.fps;
    if (seq.joints != v) {
      const bool selectable = skel.selection && skel.selection->size() == v &&
                              *std::max_element(skel.selection->begin(), skel.selection->end()) < seq.joints;
      if (!selectable)
        throw DataError(seq.source + " has " + std::to_string(seq.joints) + " joints; the skeleton has " +
                        std::to_string(v) + " and its selection list does not apply");
      seq = select_joints(seq, *skel.selection);
    }
    if (cfg.center) center_sequence(seq);
  }
  return seqs;
}

inline std::vector<MotionSequence> load_sequences(const std::vector<std::filesystem::path>& files, const RunConfig& cfg) {
  std::vector<MotionSequence> seqs;
  for (const auto& f : files) {
    auto part = load_csv(f, CsvSchema{cfg.csv_header, std::nullopt});
    seqs.insert(seqs.end(), std::make_move_iterator(part.begin()), std::make_move_iterator(part.end()));
  }
  if (!cfg.action_manifest.empty()) apply_action_manifest(seqs, load_action_manifest(cfg.action_manifest));
  return seqs;
}

inline std::vector<MotionSequence> load_split(const RunConfig& cfg, const SkeletonConfig& skel, Split split) {
  std::vector<MotionSequence> seqs;
  if (cfg.data == "synthetic") {
    const std::size_t v = skel.hierarchy.skeleton(0).size();
    switch (split) {
      case Split::train:
        seqs = synthetic_split(cfg.synthetic_seed, cfg.synthetic_train_sequences, cfg.synthetic_frames, v, cfg.fps,
                               cfg.synthetic_rest_seed);
        break;
      case Split::val:
        seqs = synthetic_split(cfg.synthetic_seed + 400, cfg.synthetic_val_sequences, cfg.synthetic_frames, v, cfg.fps,
                               cfg.synthetic_rest_seed);
        break;
      case Split::test:
        seqs = synthetic_split(cfg.synthetic_seed + 800, cfg.synthetic_test_sequences, cfg.synthetic_frames, v, cfg.fps,
                               cfg.synthetic_rest_seed);
        break;
    }
  } else if (cfg.data == "csv") {
    const auto& files = split == Split::train ? cfg.train_csv : split == Split::val ? cfg.val_csv : cfg.test_csv;
    seqs = load_sequences(files, cfg);
  } else {
    throw ConfigError("data must be 'synthetic' or 'csv', got '" + cfg.data + "'");
  }
  return prepare_sequences(std::move(seqs), cfg, skel);
}

inline std::vector<WindowSample> split_windows(const std::vector<MotionSequence>& seqs, const ModelConfig& m,
                                               std::size_t stride, std::size_t limit = 0) {
  std::vector<WindowSample> out;
  for (const auto& seq : seqs) {
    auto w = windows(seq, m.observed_frames, m.predicted_frames, stride);
    out.insert(out.end(), std::make_move_iterator(w.begin()), std::make_move_iterator(w.end()));
  }
  if (limit && out.size() > limit) out.resize(limit);
  return out;
}

inline std::filesystem::path checkpoint_dir(const RunConfig& cfg) {
  if (!cfg.checkpoint.empty()) return cfg.checkpoint;
  if (cfg.train.out_dir.empty()) throw ConfigError("no checkpoint given and out_dir is empty");
  return cfg.train.out_dir / "final";
}

inline TrainResult cmd_train(const RunConfig& cfg, std::ostream& log) {
  if (cfg.train.out_dir.empty()) throw ConfigError("train needs an out_dir");
  const SkeletonConfig skel = resolve_skeleton(cfg);
  const ModelConfig mc = resolve_model_config(cfg, skel);
  const auto train_set = split_windows(load_split(cfg, skel, Split::train), mc, cfg.train_stride, cfg.max_train_windows);
  const auto val_set = split_windows(load_split(cfg, skel, Split::val), mc, cfg.test_stride);
  log << "train windows " << train_set.size() << ", validation windows " << val_set.size() << '\n';
  DMSGCNModel<float> model(mc);
  log << "trainable parameters " << model.param_count() << '\n';
  return train(model, train_set, val_set.empty() ? nullptr : &val_set, cfg.train, &log);
}

struct EvalOutcome {
  EvalReport report;
  EvalReport baseline;  // zero-velocity
  std::vector<WindowError> windows;
};

/// Writes eval_report.csv, eval_windows.csv and eval_baseline.csv into out_dir when set.
inline EvalOutcome cmd_eval(const RunConfig& cfg, std::ostream& log) {
  const SkeletonConfig skel = resolve_skeleton(cfg);
  const ModelConfig mc = resolve_model_config(cfg, skel);
  const auto dir = checkpoint_dir(cfg);
  const DMSGCNModel<float> model = load_checkpoint<float>(dir, mc);
  const auto test_set = split_windows(load_split(cfg, skel, Split::test), mc, cfg.test_stride);
  const auto hs = horizons(cfg.fps, mc.predicted_frames);
  const auto t0 = std::chrono::steady_clock::now();
  EvalOutcome out;
  out.windows = evaluate_windows(model, test_set, hs);
  out.report = build_report(out.windows, hs);
  out.report.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  out.baseline = build_report(zero_velocity_windows(test_set, hs), hs);
  log << "checkpoint " << dir.string() << ", " << test_set.size() << " windows, " << out.report.seconds << " s\n";
  print_table(log, out.report);
  log << "zero-velocity baseline\n";
  print_table(log, out.baseline);
  if (!cfg.train.out_dir.empty()) {
    std::filesystem::create_directories(cfg.train.out_dir);
    write_report_csv(cfg.train.out_dir / "eval_report.csv", out.report);
    write_window_csv(cfg.train.out_dir / "eval_windows.csv", out.windows, hs);
    write_report_csv(cfg.train.out_dir / "eval_baseline.csv", out.baseline);
  }
  return out;
}

/// Predicts K frames from the last T frames of the first sequence in `input`.
inline MotionSequence cmd_predict(const RunConfig& cfg) {
  if (cfg.input.empty() || cfg.output.empty()) throw ConfigError("predict needs input and output");
  const SkeletonConfig skel = resolve_skeleton(cfg);
  const ModelConfig mc = resolve_model_config(cfg, skel);
  const DMSGCNModel<float> model = load_checkpoint<float>(checkpoint_dir(cfg), mc);
  RunConfig plain = cfg;
  plain.center = false;
  const auto seqs = prepare_sequences(load_sequences({cfg.input}, plain), plain, skel);
  const MotionSequence& seq = seqs.front();
  const std::size_t t = mc.observed_frames, v = mc.joints();
  if (seq.frames < t)
    throw DataError(cfg.input.string() + " has " + std::to_string(seq.frames) + " frames, prediction needs " +
                    std::to_string(t));
  Tensor<float> observed(Shape{1, t, v, 3});
  const auto first = seq.values.begin() + static_cast<std::ptrdiff_t>((seq.frames - t) * v * 3);
  std::copy(first, seq.values.end(), observed.data().begin());
  NoGradGuard guard;
  const Tensor<float> pred = model.forward_frames(observed);
  MotionSequence out;
  out.frames = mc.predicted_frames;
  out.joints = v;
  out.fps = seq.fps;
  out.source = seq.source + "-prediction";
  out.values.assign(pred.data().begin(), pred.data().end());
  write_csv(cfg.output, out);
  return out;
}

inline GradSuiteReport cmd_gradcheck(const RunConfig& cfg, std::ostream& log) {
  GradSuiteOptions opt;
  opt.seed = cfg.gradcheck_seed;
  opt.include_model = cfg.gradcheck_model;
  opt.inject_fault = cfg.inject_fault;
  GradSuiteReport report = run_gradcheck_suite(opt, &log);
  const GradCheckLine* worst = report.worst();
  log << (report.passed() ? "PASS" : "FAIL") << ": " << report.lines.size() << " checks in " << report.seconds
      << " s; worst " << worst->name << " at " << worst->result.max_rel_error / worst->tolerance << " of tolerance\n";
  return report;
}

/// SVGs go to `output` (a directory), or <out_dir>/svg.
inline std::vector<std::filesystem::path> cmd_render(const RunConfig& cfg, const RenderConfig& view = {}) {
  if (cfg.input.empty()) throw ConfigError("render needs an input CSV");
  const SkeletonConfig skel = resolve_skeleton(cfg);
  const std::filesystem::path dir = !cfg.output.empty() ? cfg.output
                                    : !cfg.train.out_dir.empty() ? cfg.train.out_dir / "svg"
                                                                 : throw ConfigError("render needs output or out_dir");
  const auto seqs = load_sequences({cfg.input}, cfg);
  const Skeleton& joints = skel.hierarchy.skeleton(0);
  MotionSequence seq = seqs.front();
  if (seq.joints != joints.size() && skel.selection && skel.selection->size() == joints.size() &&
      *std::max_element(skel.selection->begin(), skel.selection->end()) < seq.joints)
    seq = select_joints(seq, *skel.selection);
  return render_frames(seq, joints, dir, cfg.render_prefix, cfg.render_frames, view);
}

struct AblationRow {
  std::string variant;
  std::size_t param_count = 0;
  std::vector<double> step_losses;
  std::vector<double> epoch_losses;
};

/// The full model plus the four ablations: single scale, two scales, no mask, no TGCN.
inline std::vector<std::pair<std::string, ModelConfig>> ablation_variants(const ModelConfig& base) {
  std::vector<std::pair<std::string, ModelConfig>> out;
  out.emplace_back("DMS-GCN", base);
  ModelConfig one = base, two = base, no_mask = base, no_tgcn = base;
  one.scales = 1;
  two.scales = 2;
  no_mask.mask_enabled = false;
  no_tgcn.tgcn_enabled = false;
  out.emplace_back("DMS-GCN-1L", one);
  out.emplace_back("DMS-GCN-2L", two);
  out.emplace_back("w/o Mask", no_mask);
  out.emplace_back("w/o TGCN", no_tgcn);
  return out;
}

/// Trains every variant for ablate_epochs on the train split; writes ablation.csv
/// (variant, param_count, step, loss) into out_dir when set.
inline std::vector<AblationRow> cmd_ablate(const RunConfig& cfg, std::ostream& log) {
  const SkeletonConfig skel = resolve_skeleton(cfg);
  const ModelConfig base = resolve_model_config(cfg, skel);
  const auto train_set = split_windows(load_split(cfg, skel, Split::train), base, cfg.train_stride, cfg.max_train_windows);
  TrainConfig tc = cfg.train;
  tc.epochs = cfg.ablate_epochs;
  tc.out_dir.clear();
  std::vector<AblationRow> rows;
  for (const auto& [name, mc] : ablation_variants(base)) {
    DMSGCNModel<float> model(mc);
    AblationRow row{name, model.param_count(), {}, {}};
    const TrainResult r = train(model, train_set, nullptr, tc);
    row.step_losses = r.step_losses;
    for (const auto& e : r.history) row.epoch_losses.push_back(e.train_loss);
    char buf[160];
    std::snprintf(buf, sizeof(buf), "%-12s params=%8zu final_train_loss=%.6g (%.1fs)\n", name.c_str(), row.param_count,
                  row.epoch_losses.back(), r.seconds);
    log << buf << std::flush;
    rows.push_back(std::move(row));
  }
  if (!cfg.train.out_dir.empty()) {
    std::filesystem::create_directories(cfg.train.out_dir);
    auto out = detail::open_csv(cfg.train.out_dir / "ablation.csv");
    out << "variant,param_count,step,loss\n";
    for (const auto& row : rows)
      for (std::size_t s = 0; s < row.step_losses.size(); ++s)
        out << row.variant << ',' << row.param_count << ',' << s << ',' << detail::fmt17(row.step_losses[s]) << '\n';
  }
  return rows;
}

}  // namespace dmsgcn
