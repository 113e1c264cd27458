#pragma once

#include <charconv>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "dmsgcn/checkpoint.hpp"
#include "dmsgcn/data.hpp"
#include "dmsgcn/metrics.hpp"
#include "dmsgcn/model.hpp"
#include "dmsgcn/ops.hpp"
#include "dmsgcn/optim.hpp"

namespace dmsgcn {

struct TrainConfig {
  std::size_t epochs = 50;
  std::size_t batch_size = 32;
  AdamConfig adam;
  std::size_t lr_period = 10;  // epochs between halvings
  bool shuffle = true;
  std::uint64_t seed = 0;           // shuffling and dropout
  std::size_t checkpoint_every = 0;  // epochs; 0 = final checkpoint only
  std::filesystem::path out_dir;     // empty = nothing written
  bool dump_first_batch = false;     // epoch-0 predictions/targets of the first batch as CSV
};

struct EpochRecord {
  std::size_t epoch = 0;
  double lr = 0.0;
  double train_loss = 0.0;
  std::optional<double> val_loss;
};

struct TrainResult {
  std::vector<EpochRecord> history;
  std::vector<double> step_losses;
  std::size_t steps = 0;
  double seconds = 0.0;
};

namespace detail {

inline std::string shortest(double v) {
  char buf[40];
  const auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

template <typename S>
void write_rows_csv(const std::filesystem::path& path, const Tensor<S>& t) {
  auto out = open_csv(path);
  const std::size_t cols = t.dim(-1) * t.dim(-2);
  const auto d = t.data();
  for (std::size_t i = 0; i < d.size(); i += cols) {
    for (std::size_t j = 0; j < cols; ++j) out << (j ? "," : "") << shortest(static_cast<double>(d[i + j]));
    out << '\n';
  }
}

}  // namespace detail

/// Mean l1 loss over windows, evaluation mode, no tape.
template <typename S>
double evaluate_loss(const DMSGCNModel<S>& model, const std::vector<WindowSample>& samples,
                     std::size_t batch_size = 32) {
  NoGradGuard guard;
  double total = 0.0;
  for (const auto& idx : batch_indices(samples.size(), batch_size)) {
    const Batch<S> b = make_batch<S>(samples, idx);
    total += static_cast<double>(l1_loss(model.forward_frames(b.observed), b.target).item()) *
             static_cast<double>(idx.size());
  }
  return total / static_cast<double>(samples.size());
}

/// Adam on the l1 loss with step-decayed learning rate. Deterministic given
/// (model seed, config.seed) on a single thread. Throws NumericalError on a
/// non-finite loss.
template <typename S>
TrainResult train(DMSGCNModel<S>& model, const std::vector<WindowSample>& train_set,
                  const std::vector<WindowSample>* val_set, const TrainConfig& config, std::ostream* log = nullptr) {
  if (train_set.empty()) throw DataError("training set is empty");
  if (config.batch_size == 0) throw ConfigError("batch_size must be >= 1");
  if (config.lr_period == 0) throw ConfigError("lr_period must be >= 1");
  if (!(config.adam.lr > 0.0 && std::isfinite(config.adam.lr))) throw ConfigError("learning rate must be positive and finite");
  if (!(config.adam.beta1 >= 0.0 && config.adam.beta1 < 1.0 && config.adam.beta2 >= 0.0 && config.adam.beta2 < 1.0))
    throw ConfigError("Adam betas must lie in [0, 1)");
  if (!(config.adam.eps > 0.0)) throw ConfigError("Adam eps must be positive");
  const auto t0 = std::chrono::steady_clock::now();
  const bool writing = !config.out_dir.empty();
  std::ofstream loss_log;
  if (writing) {
    std::filesystem::create_directories(config.out_dir);
    loss_log = detail::open_csv(config.out_dir / "loss.csv");
    loss_log << "epoch,lr,train_loss,val_loss\n";
  }
  AdamState<S> adam(config.adam);
  Tape<S>& tape = active_tape<S>();
  TrainResult result;
  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    adam.config.lr = lr_schedule(epoch, config.adam.lr, config.lr_period);
    const auto batches = batch_indices(train_set.size(), config.batch_size,
                                       config.shuffle ? std::optional<std::uint64_t>(mix_seed(config.seed, epoch))
                                                      : std::nullopt);
    double epoch_total = 0.0;
    for (std::size_t bi = 0; bi < batches.size(); ++bi) {
      const Batch<S> batch = make_batch<S>(train_set, batches[bi]);
      tape.clear();
      const ForwardContext ctx{true, config.seed, result.steps};
      const Tensor<S> pred = model.forward_frames(batch.observed, ctx);
      const Tensor<S> loss = l1_loss(pred, batch.target);
      const double value = static_cast<double>(loss.item());
      if (!std::isfinite(value))
        throw NumericalError("non-finite training loss at epoch " + std::to_string(epoch) + ", batch " +
                             std::to_string(bi) + " (step " + std::to_string(result.steps) + ")");
      if (writing && config.dump_first_batch && epoch == 0 && bi == 0) {
        detail::write_rows_csv(config.out_dir / "epoch0_batch0_pred.csv", pred);
        detail::write_rows_csv(config.out_dir / "epoch0_batch0_target.csv", batch.target);
        std::ofstream(config.out_dir / "epoch0_batch0_loss.txt") << detail::shortest(value) << '\n';
      }
      backward(loss);
      adam_step(model.parameters(), adam);
      tape.clear();
      epoch_total += value * static_cast<double>(batches[bi].size());
      result.step_losses.push_back(value);
      ++result.steps;
    }
    EpochRecord rec{epoch, adam.config.lr, epoch_total / static_cast<double>(train_set.size()), std::nullopt};
    if (val_set && !val_set->empty()) rec.val_loss = evaluate_loss(model, *val_set, config.batch_size);
    result.history.push_back(rec);
    if (writing) {
      loss_log << epoch << ',' << detail::shortest(rec.lr) << ',' << detail::shortest(rec.train_loss) << ','
               << (rec.val_loss ? detail::shortest(*rec.val_loss) : "") << '\n';
      loss_log.flush();
      if (!loss_log) throw DataError("failed writing " + (config.out_dir / "loss.csv").string());
      if (config.checkpoint_every && (epoch + 1) % config.checkpoint_every == 0 && epoch + 1 < config.epochs) {
        char name[32];
        std::snprintf(name, sizeof(name), "epoch_%04zu", epoch + 1);
        save_checkpoint(model, config.out_dir / "checkpoints" / name);
      }
    }
    if (log) {
      *log << "epoch " << epoch << " lr " << rec.lr << " train " << rec.train_loss;
      if (rec.val_loss) *log << " val " << *rec.val_loss;
      *log << '\n';
    }
  }
  if (writing) save_checkpoint(model, config.out_dir / "final");
  result.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return result;
}

/// Per-window horizon errors of the model in evaluation mode.
template <typename S>
std::vector<WindowError> evaluate_windows(const DMSGCNModel<S>& model, const std::vector<WindowSample>& samples,
                                          const std::vector<Horizon>& hs, std::size_t batch_size = 32) {
  NoGradGuard guard;
  std::vector<WindowError> out;
  for (const auto& idx : batch_indices(samples.size(), batch_size)) {
    const Batch<S> b = make_batch<S>(samples, idx);
    const Tensor<S> pred = model.forward_frames(b.observed);
    const std::size_t per = pred.numel() / idx.size();
    for (std::size_t i = 0; i < idx.size(); ++i) {
      const WindowSample& w = samples[idx[i]];
      if (w.joints != model.config().joints())
        throw DimensionError("window has " + std::to_string(w.joints) + " joints, model expects " +
                             std::to_string(model.config().joints()));
      const auto p = pred.data().subspan(i * per, per);
      const auto t = b.target.data().subspan(i * per, per);
      out.push_back({w.sequence, w.offset, w.action, horizon_errors<S>(p, t, w.joints, hs)});
    }
  }
  return out;
}

/// Repeats the last observed pose for every predicted frame.
inline std::vector<float> zero_velocity_prediction(const WindowSample& w) {
  const std::size_t per_frame = w.joints * 3;
  std::vector<float> pred(w.predicted_frames * per_frame);
  const auto last = w.observed.begin() + static_cast<std::ptrdiff_t>((w.observed_frames - 1) * per_frame);
  for (std::size_t k = 0; k < w.predicted_frames; ++k)
    std::copy(last, last + static_cast<std::ptrdiff_t>(per_frame), pred.begin() + static_cast<std::ptrdiff_t>(k * per_frame));
  return pred;
}

inline std::vector<WindowError> zero_velocity_windows(const std::vector<WindowSample>& samples,
                                                      const std::vector<Horizon>& hs) {
  std::vector<WindowError> out;
  for (const WindowSample& w : samples) {
    const auto pred = zero_velocity_prediction(w);
    out.push_back({w.sequence, w.offset, w.action,
                   horizon_errors<float>(std::span<const float>(pred), std::span<const float>(w.target), w.joints, hs)});
  }
  return out;
}

}  // namespace dmsgcn
