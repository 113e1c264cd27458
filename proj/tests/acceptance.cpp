// Acceptance criteria 1-10. Prints one PASS/FAIL line per criterion; exits
// nonzero if any fails. `--only N` runs a single criterion.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "dmsgcn/commands.hpp"
#include "oracles.hpp"

using namespace dmsgcn;

namespace {

struct Verdict {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* pattern, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof(buf), pattern, args...);
  return buf;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

std::filesystem::path scratch(const std::string& name) {
  const auto p = std::filesystem::temp_directory_path() / ("dmsgcn_acceptance_" + name);
  std::filesystem::remove_all(p);
  std::filesystem::create_directories(p);
  return p;
}

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

template <typename S>
Tensor<S> from(Shape shape, const std::vector<double>& values) {
  Tensor<S> t(std::move(shape));
  for (std::size_t i = 0; i < values.size(); ++i) t.data()[i] = static_cast<S>(values[i]);
  return t;
}

std::vector<double> values(const Tensor<double>& t) { return {t.data().begin(), t.data().end()}; }

void assign(const ParamPtr<double>& p, const std::vector<double>& v) {
  std::copy(v.begin(), v.end(), p->value.data().begin());
}

Skeleton random_skeleton(std::mt19937_64& gen, std::size_t v) {
  std::vector<int> parents{-1};
  for (std::size_t i = 1; i < v; ++i) parents.push_back(static_cast<int>(gen() % i));
  return Skeleton(parents);
}

std::size_t pick(std::mt19937_64& gen, std::size_t lo, std::size_t hi) {
  return std::uniform_int_distribution<std::size_t>(lo, hi)(gen);
}

std::vector<WindowSample> synthetic_windows(std::uint64_t first_seed, std::size_t sequences, std::size_t frames,
                                            std::size_t stride, std::size_t limit = 0) {
  const ModelConfig mc;
  return split_windows(synthetic_split(first_seed, sequences, frames, mc.joints(), 25.0, 1), mc, stride, limit);
}

Verdict gradient_suite() {
  GradSuiteOptions opt;
  opt.seed = 0;
  std::ostringstream log;
  const GradSuiteReport r = run_gradcheck_suite(opt, &log);
  std::cout << log.str();
  bool tolerances = opt.layer_tolerance <= 1e-5 && opt.model_tolerance <= 1e-4;
  const GradCheckLine* worst = r.worst();
  const bool pass = r.passed() && tolerances && r.seconds < 120.0;
  return {pass, fmt("%zu checks, worst %s at %.3g of its tolerance, %.1f s", r.lines.size(), worst->name.c_str(),
                    worst->result.max_rel_error / worst->tolerance, r.seconds)};
}

Verdict mask_semantics() {
  ModelConfig mc;
  DMSGCNModel<float> model(mc);
  TrainConfig tc;
  tc.epochs = 25;
  tc.batch_size = 4;
  const auto ws = synthetic_windows(100, 1, 50, 1);
  const TrainResult r = train(model, ws, nullptr, tc);
  std::size_t masked = 0, violations = 0, moved = 0;
  for (const auto& p : model.parameters()) {
    if (p->name.find(".A_s") == std::string::npos) continue;
    for (std::size_t i = 0; i < p->value.numel(); ++i) {
      if (p->trainable(i)) continue;
      ++masked;
      violations += p->value.data()[i] != 0.0f;
    }
  }
  const auto& trained = model.parameters().find("joint.block0.sgcn.A_s")->value;
  const auto init = init_spatial_adjacency<float>(mc.hierarchy.skeleton(0), build_mask(mc.hierarchy.skeleton(0), mc.max_hop[0]));
  for (std::size_t i = 0; i < trained.numel(); ++i) moved += trained.data()[i] != init.adjacency->value.data()[i];

  // isolation: one SGCN layer carrying the trained adjacency and a diagonal table
  const Skeleton& s = mc.hierarchy.skeleton(0);
  const Mask mask = build_mask(s, mc.max_hop[0]);
  ParameterSet<double> ps;
  auto layer = SGCNLayer<double>::create(ps, "iso", s, mask, 3, 6, 0.0, 11);
  for (std::size_t i = 0; i < trained.numel(); ++i) layer.graph.adjacency->value.data()[i] = trained.data()[i];
  std::mt19937_64 gen(2);
  for (std::size_t i = 0; i < s.size(); ++i) layer.table->value.data()[i * s.size() + i] = oracle::uniform(1, gen, 0.5, 1.5)[0];
  const std::size_t v = s.size();
  int broken = 0;
  for (int trial = 0; trial < 50; ++trial) {
    std::size_t i = 0, j = 0;
    do {
      i = pick(gen, 0, v - 1);
      j = pick(gen, 0, v - 1);
    } while (mask(i, j));
    auto x = oracle::uniform(4 * v * 3, gen);
    const auto before = values(layer.forward(from<double>({4, v, 3}, x), ForwardContext{}));
    for (std::size_t t = 0; t < 4; ++t)
      for (std::size_t c = 0; c < 3; ++c) x[(t * v + j) * 3 + c] += oracle::uniform(1, gen, -5, 5)[0];
    const auto after = values(layer.forward(from<double>({4, v, 3}, x), ForwardContext{}));
    bool same = true;
    for (std::size_t t = 0; t < 4; ++t)
      for (std::size_t c = 0; c < 6; ++c) same &= before[(t * v + i) * 6 + c] == after[(t * v + i) * 6 + c];
    broken += !same;
  }
  const bool pass = r.steps == 100 && masked == model.mask_zero_count() && masked > 0 && violations == 0 &&
                    moved > 0 && broken == 0;
  return {pass, fmt("%zu Adam steps, %zu masked entries, %zu nonzero, %zu in-mask entries moved; isolation broken in "
                    "%d of 50 trials",
                    r.steps, masked, violations, moved, broken)};
}

Verdict oracle_equivalence() {
  std::mt19937_64 gen(3);
  double worst[6] = {0, 0, 0, 0, 0, 0};
  for (int trial = 0; trial < 100; ++trial) {
    {
      const std::size_t v = pick(gen, 2, 9), t = pick(gen, 1, 5), cin = pick(gen, 1, 5), cout = pick(gen, 1, 5);
      const Skeleton s = random_skeleton(gen, v);
      const Mask mask = build_mask(s, static_cast<int>(pick(gen, 0, 3)));
      ParameterSet<double> ps;
      auto layer = SGCNLayer<double>::create(ps, "s", s, mask, cin, cout, 0.0, 1);
      const auto as = oracle::uniform(v * v, gen), ts = oracle::uniform(v * v, gen), w = oracle::uniform(cin * cout, gen);
      const double slope = oracle::uniform(1, gen, 0.0, 0.5)[0];
      const auto h = oracle::uniform(t * v * cin, gen);
      assign(layer.graph.adjacency, as);
      assign(layer.table, ts);
      assign(layer.weight, w);
      assign(layer.slope, {slope});
      const std::vector<double> m(mask.bits.begin(), mask.bits.end());
      const auto got = values(layer.forward(from<double>({t, v, cin}, h), ForwardContext{}));
      worst[0] = std::max(worst[0], oracle::max_abs_diff(got, oracle::sgcn(h, t, v, cin, cout, ts, as, m, w, slope)));
    }
    {
      const std::size_t t = pick(gen, 2, 8), v = pick(gen, 1, 5), cin = pick(gen, 1, 4), cout = pick(gen, 1, 4);
      ParameterSet<double> ps;
      auto layer = TGCNLayer<double>::create(ps, "t", t, cin, cout, 0.0, 1);
      const auto at = oracle::uniform(t * t, gen), tt = oracle::uniform(t * t, gen), w = oracle::uniform(cin * cout, gen);
      const double slope = oracle::uniform(1, gen, 0.0, 0.5)[0];
      const auto h = oracle::uniform(t * v * cin, gen);
      assign(layer.graph.adjacency, at);
      assign(layer.table, tt);
      assign(layer.weight, w);
      assign(layer.slope, {slope});
      const auto got = values(layer.forward(from<double>({t, v, cin}, h), ForwardContext{}));
      worst[1] = std::max(worst[1], oracle::max_abs_diff(got, oracle::tgcn(h, t, v, cin, cout, tt, at, w, slope)));
    }
    {
      const std::size_t v1 = pick(gen, 3, 8), v2 = pick(gen, 2, 5), v3 = pick(gen, 1, 3), rows = pick(gen, 1, 4),
                        c = pick(gen, 1, 4);
      const double alpha = oracle::uniform(1, gen, 0.0, 1.0)[0];
      const auto w32 = oracle::uniform(v2 * v3, gen), w21 = oracle::uniform(v1 * v2, gen);
      ParameterSet<double> ps;
      FusionUnit<double> unit;
      unit.up_part_to_bone = ps.create("W_32", from<double>({v2, v3}, w32), ParamKind::weight);
      unit.up_bone_to_joint = ps.create("W_21", from<double>({v1, v2}, w21), ParamKind::weight);
      unit.alpha = alpha;
      const auto x3 = oracle::uniform(rows * v3 * c, gen), x2 = oracle::uniform(rows * v2 * c, gen),
                 x1 = oracle::uniform(rows * v1 * c, gen);
      const auto got = values(unit.fuse(from<double>({rows, v3, c}, x3), from<double>({rows, v2, c}, x2),
                                        from<double>({rows, v1, c}, x1)));
      const auto x2p = oracle::blend(x3, x2, w32, rows, v2, v3, c, alpha);
      worst[2] = std::max(worst[2], oracle::max_abs_diff(got, oracle::blend(x2p, x1, w21, rows, v1, v2, c, alpha)));
    }
    {
      const std::size_t t = pick(gen, 2, 10), k = pick(gen, 2, 8), n = pick(gen, 1, 4), v = pick(gen, 1, 4),
                        c = pick(gen, 1, 3);
      ParameterSet<double> ps;
      const auto decoder = make_decoder<double>(ps, "d", t, k, n, 1);
      std::vector<oracle::TcnLayer> ref;
      for (const auto& l : decoder) {
        oracle::TcnLayer r;
        r.in = l.in_frames();
        r.out = l.out_frames();
        r.w = oracle::uniform(r.in * r.out, gen, -0.5, 0.5);
        r.b = oracle::uniform(r.out, gen, -0.5, 0.5);
        r.activated = l.slope != nullptr;
        assign(l.weight, r.w);
        assign(l.bias, r.b);
        if (l.slope) {
          r.slope = oracle::uniform(1, gen, 0.1, 0.4)[0];
          assign(l.slope, {r.slope});
        }
        ref.push_back(r);
      }
      const auto x = oracle::uniform(t * v * c, gen), last = oracle::uniform(v * c, gen);
      const bool residual = gen() % 2;
      const auto got = values(tcn_decode(from<double>({t, v, c}, x), decoder, from<double>({v, c}, last), residual));
      worst[3] = std::max(worst[3], oracle::max_abs_diff(got, oracle::tcn(x, t, v, c, ref, residual ? &last : nullptr)));
    }
    {
      const std::size_t b = pick(gen, 1, 4), k = pick(gen, 1, 6), v = pick(gen, 1, 6);
      const auto p = oracle::uniform(b * k * v * 3, gen), t = oracle::uniform(b * k * v * 3, gen);
      const double got = l1_loss(from<double>({b, k, v, 3}, p), from<double>({b, k, v, 3}, t)).item();
      worst[4] = std::max(worst[4], std::abs(got - oracle::l1(p, t)));
    }
    {
      const std::size_t k = pick(gen, 1, 25), v = pick(gen, 1, 22);
      const auto p = oracle::uniform(k * v * 3, gen, -100, 100), t = oracle::uniform(k * v * 3, gen, -100, 100);
      std::vector<std::size_t> frames;
      for (std::size_t f = 0; f < k; ++f)
        if (gen() % 2 || f + 1 == k) frames.push_back(f);
      const double got = mpjpe<double>(std::span(p), std::span(t), v, frames);
      worst[5] = std::max(worst[5], std::abs(got - oracle::mpjpe(p, t, v, frames)));
    }
  }
  bool pass = true;
  for (double w : worst) pass &= w <= 1e-9;
  return {pass, fmt("100 instances each; max abs diff sgcn %.2g, tgcn %.2g, fuse %.2g, tcn %.2g, l1 %.2g, mpjpe %.2g",
                    worst[0], worst[1], worst[2], worst[3], worst[4], worst[5])};
}

Verdict overfit() {
  const auto t0 = std::chrono::steady_clock::now();
  DMSGCNModel<float> model{ModelConfig{}};
  TrainConfig tc;
  tc.epochs = 500;
  tc.adam.lr = 3e-3;
  tc.lr_period = 100;
  const auto ws = synthetic_windows(100, 1, 50, 1);
  const TrainResult r = train(model, ws, nullptr, tc);
  const double first = r.history.front().train_loss;
  std::size_t reached = 0;
  double best = first;
  for (const auto& e : r.history) {
    best = std::min(best, e.train_loss);
    if (!reached && e.train_loss <= 0.05 * first) reached = e.epoch + 1;
  }
  const double secs = seconds_since(t0);
  return {ws.size() == 16 && reached > 0 && secs < 300.0,
          fmt("%zu windows; epoch-1 loss %.4g, best %.4g (%.2f%%), 5%% reached at epoch %zu, %.1f s", ws.size(), first,
              best, 100.0 * best / first, reached, secs)};
}

Verdict baseline_superiority() {
  const auto t0 = std::chrono::steady_clock::now();
  const auto train_set = synthetic_windows(100, 8, 108, 3, 200);
  const auto test_set = synthetic_windows(900, 4, 80, 5);
  DMSGCNModel<float> model{ModelConfig{}};
  TrainConfig tc;
  tc.epochs = 25;
  tc.adam.lr = 3e-3;
  tc.lr_period = 10;
  train(model, train_set, nullptr, tc);
  const auto hs = horizons();
  const auto ours = build_report(evaluate_windows(model, test_set, hs), hs);
  const auto zero = build_report(zero_velocity_windows(test_set, hs), hs);
  std::size_t h400 = 0;
  while (hs[h400].ms != 400) ++h400;
  const double a = ours.average().values[h400], b = zero.average().values[h400];
  return {train_set.size() == 200 && a <= 0.8 * b,
          fmt("%zu train / %zu test windows; 400 ms MPJPE %.2f vs zero-velocity %.2f (ratio %.3f), %.1f s",
              train_set.size(), test_set.size(), a, b, a / b, seconds_since(t0))};
}

Verdict parameter_budget() {
  ModelConfig off;
  off.mask_enabled = false;
  const DMSGCNModel<float> masked{ModelConfig{}}, unmasked{off};
  const std::size_t n = masked.param_count();
  const bool pass = n >= 200000 && n <= 500000 && unmasked.param_count() - n == masked.mask_zero_count();
  return {pass, fmt("%zu trainable; without masks %zu, difference %zu, mask zeros %zu", n, unmasked.param_count(),
                    unmasked.param_count() - n, masked.mask_zero_count())};
}

Verdict fixed_points() {
  DMSGCNModel<float> model{ModelConfig{}};
  model.zero_weights();
  const auto x = random_tensor<float>({4, 3, 10, 22}, 7, -1000, 1000);
  const auto y = model.forward(x);
  std::size_t mismatched = 0;
  for (std::size_t b = 0; b < 4; ++b)
    for (std::size_t c = 0; c < 3; ++c)
      for (std::size_t k = 0; k < 25; ++k)
        for (std::size_t v = 0; v < 22; ++v)
          mismatched += y.data()[((b * 3 + c) * 25 + k) * 22 + v] != x.data()[((b * 3 + c) * 10 + 9) * 22 + v];

  ModelConfig zero_alpha;
  zero_alpha.alpha = 0.0;
  const DMSGCNModel<double> fused(zero_alpha);
  const auto joint = random_tensor<double>({2, 10, 22, 8}, 8);
  const auto out = fused.fusion().fuse(random_tensor<double>({2, 10, 5, 8}, 9), random_tensor<double>({2, 10, 10, 8}, 10),
                                       joint);
  const bool fine = values(out) == values(joint);
  return {mismatched == 0 && fine,
          fmt("copy-last-frame mismatches %zu of %zu; alpha=0 fusion returns fine features bitwise: %s", mismatched,
              y.numel(), fine ? "yes" : "no")};
}

Verdict ablation() {
  const auto dir = scratch("ablation");
  RunConfig cfg;
  cfg.train.out_dir = dir;
  cfg.max_train_windows = 128;
  std::ostringstream log;
  const auto rows = cmd_ablate(cfg, log);
  std::cout << log.str();
  std::set<std::size_t> counts;
  std::set<std::vector<double>> curves;
  bool finite = true;
  for (const auto& r : rows) {
    counts.insert(r.param_count);
    curves.insert(r.step_losses);
    for (double l : r.step_losses) finite &= std::isfinite(l);
  }
  std::filesystem::remove_all(dir);
  return {rows.size() == 5 && counts.size() == 5 && curves.size() == 5 && finite,
          fmt("%zu variants incl. full model, %zu distinct parameter counts, %zu distinct loss trajectories",
              rows.size(), counts.size(), curves.size())};
}

Verdict determinism() {
  const auto root = scratch("determinism");
  auto run = [&](const std::string& name) {
    RunConfig cfg;
    cfg.train.out_dir = root / name;
    cfg.train.epochs = 3;
    cfg.train.checkpoint_every = 1;
    cfg.synthetic_train_sequences = 2;
    cfg.synthetic_val_sequences = 1;
    cfg.synthetic_frames = 50;
    std::ostringstream log;
    cmd_train(cfg, log);
  };
  run("a");
  run("b");
  std::size_t files = 0, differing = 0;
  for (const auto& entry : std::filesystem::recursive_directory_iterator(root / "a")) {
    if (!entry.is_regular_file()) continue;
    const auto rel = std::filesystem::relative(entry.path(), root / "a");
    ++files;
    differing += slurp(entry.path()) != slurp(root / "b" / rel);
  }
  const bool has_log = std::filesystem::exists(root / "a" / "loss.csv");
  std::filesystem::remove_all(root);
  return {has_log && files > 3 && differing == 0,
          fmt("%zu files compared (loss log and checkpoints), %zu differ", files, differing)};
}

Verdict horizon_mapping() {
  const auto dir = scratch("horizons");
  RunConfig cfg;
  cfg.model.hidden_width = 8;
  cfg.train.out_dir = dir;
  cfg.synthetic_test_sequences = 1;
  cfg.synthetic_frames = 40;
  save_checkpoint(DMSGCNModel<float>(resolve_model_config(cfg, resolve_skeleton(cfg))), checkpoint_dir(cfg));
  std::ostringstream log;
  const auto out = cmd_eval(cfg, log);
  const std::vector<Horizon> expected{{80, 2}, {160, 4}, {320, 8}, {400, 10}, {560, 14}, {1000, 25}};
  std::ifstream csv(dir / "eval_report.csv");
  std::string header;
  std::getline(csv, header);
  std::filesystem::remove_all(dir);
  std::string mapping;
  for (const auto& h : out.report.horizons) mapping += fmt("%s%dms->%zu", mapping.empty() ? "" : " ", h.ms, h.frame);
  return {out.report.horizons == expected && header == "action,samples,80ms,160ms,320ms,400ms,560ms,1000ms",
          mapping};
}

const std::vector<std::pair<const char*, std::function<Verdict()>>> kCriteria{
    {"gradient suite", gradient_suite},
    {"mask semantics", mask_semantics},
    {"oracle equivalence", oracle_equivalence},
    {"overfit", overfit},
    {"baseline superiority", baseline_superiority},
    {"parameter budget", parameter_budget},
    {"fixed points", fixed_points},
    {"ablation harness", ablation},
    {"determinism", determinism},
    {"horizon mapping", horizon_mapping},
};

}  // namespace

int main(int argc, char** argv) {
  std::size_t only = 0;
  for (int i = 1; i < argc; ++i) {
    const std::string arg = argv[i];
    if (arg == "--only" && i + 1 < argc) {
      only = std::strtoul(argv[++i], nullptr, 10);
    } else {
      std::cerr << "usage: acceptance [--only N]\n";
      return 2;
    }
  }
  if (only > kCriteria.size()) {
    std::cerr << "no criterion " << only << '\n';
    return 2;
  }
  int failures = 0;
  for (std::size_t n = 1; n <= kCriteria.size(); ++n) {
    if (only && n != only) continue;
    const auto& [name, check] = kCriteria[n - 1];
    Verdict v;
    try {
      v = check();
    } catch (const std::exception& e) {
      v = {false, std::string("exception: ") + e.what()};
    }
    failures += !v.pass;
    std::cout << "AC" << n << ' ' << (v.pass ? "PASS" : "FAIL") << " [" << name << "] " << v.detail << std::endl;
  }
  return failures ? 1 : 0;
}
