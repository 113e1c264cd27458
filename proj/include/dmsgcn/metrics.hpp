#pragma once

#include <array>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "dmsgcn/errors.hpp"
#include "dmsgcn/tensor.hpp"

namespace dmsgcn {

inline constexpr std::array<int, 6> kHorizonsMs{80, 160, 320, 400, 560, 1000};

/// A reporting horizon: `frame` is the 1-based index of the predicted frame.
struct Horizon {
  int ms = 0;
  std::size_t frame = 0;
  bool operator==(const Horizon&) const = default;
};

/// Maps milliseconds to frames at `fps`; horizons beyond `predicted_frames` are dropped.
inline std::vector<Horizon> horizons(double fps = 25.0, std::size_t predicted_frames = 25,
                                     std::span<const int> ms_list = kHorizonsMs) {
  if (!(fps > 0)) throw ConfigError("fps must be positive");
  std::vector<Horizon> out;
  for (int ms : ms_list) {
    const double exact = ms * fps / 1000.0;
    const auto frame = static_cast<std::size_t>(std::llround(exact));
    if (frame == 0) throw ConfigError("horizon " + std::to_string(ms) + " ms is shorter than one frame");
    if (frame <= predicted_frames) out.push_back({ms, frame});
  }
  return out;
}

/// Mean Euclidean joint error over the given 0-based frames of K x V x 3 arrays.
template <typename T>
double mpjpe(std::span<const T> pred, std::span<const T> target, std::size_t joints,
             const std::vector<std::size_t>& frames) {
  if (pred.size() != target.size()) throw DimensionError("mpjpe: prediction and target sizes differ");
  if (joints == 0 || pred.size() % (joints * 3) != 0) throw DimensionError("mpjpe: size is not K x V x 3");
  if (frames.empty()) throw ContractError("mpjpe: empty frame subset");
  const std::size_t k = pred.size() / (joints * 3);
  double total = 0.0;
  for (std::size_t f : frames) {
    if (f >= k) throw DimensionError("mpjpe: frame " + std::to_string(f) + " out of range");
    for (std::size_t v = 0; v < joints; ++v) {
      const std::size_t i = (f * joints + v) * 3;
      const double dx = static_cast<double>(pred[i]) - static_cast<double>(target[i]);
      const double dy = static_cast<double>(pred[i + 1]) - static_cast<double>(target[i + 1]);
      const double dz = static_cast<double>(pred[i + 2]) - static_cast<double>(target[i + 2]);
      total += std::sqrt(dx * dx + dy * dy + dz * dz);
    }
  }
  return total / static_cast<double>(joints * frames.size());
}

template <typename S>
double mpjpe(const Tensor<S>& pred, const Tensor<S>& target, const std::vector<std::size_t>& frames) {
  if (pred.shape() != target.shape() || pred.rank() != 3 || pred.dim(2) != 3)
    throw DimensionError("mpjpe: expected equal K x V x 3 shapes, got " + shape_str(pred.shape()) + " and " +
                         shape_str(target.shape()));
  return mpjpe<S>(pred.data(), target.data(), pred.dim(1), frames);
}

/// One value per frame.
template <typename T>
std::vector<double> mpjpe_per_frame(std::span<const T> pred, std::span<const T> target, std::size_t joints) {
  if (joints == 0 || pred.size() % (joints * 3) != 0) throw DimensionError("mpjpe: size is not K x V x 3");
  std::vector<double> out;
  for (std::size_t f = 0; f < pred.size() / (joints * 3); ++f) out.push_back(mpjpe<T>(pred, target, joints, {f}));
  return out;
}

/// Per-window errors at each horizon.
struct WindowError {
  std::string sequence;
  std::size_t offset = 0;
  std::string action = "all";
  std::vector<double> values;  // one per horizon
};

struct ReportRow {
  std::string action;
  std::size_t samples = 0;
  std::vector<double> values;
};

/// Per-action rows (sorted by name) followed by the sample-weighted "average" row.
struct EvalReport {
  std::vector<Horizon> horizons;
  std::vector<ReportRow> rows;
  double seconds = 0.0;

  const ReportRow& average() const { return rows.back(); }
};

template <typename T>
std::vector<double> horizon_errors(std::span<const T> pred, std::span<const T> target, std::size_t joints,
                                   const std::vector<Horizon>& hs) {
  std::vector<double> out;
  for (const Horizon& h : hs) out.push_back(mpjpe<T>(pred, target, joints, {h.frame - 1}));
  return out;
}

inline EvalReport build_report(const std::vector<WindowError>& windows, const std::vector<Horizon>& hs) {
  if (windows.empty()) throw DataError("evaluation produced no windows");
  std::map<std::string, ReportRow> by_action;
  ReportRow all{"average", 0, std::vector<double>(hs.size(), 0.0)};
  for (const WindowError& w : windows) {
    if (w.values.size() != hs.size()) throw ContractError("window error has wrong horizon count");
    ReportRow& row = by_action[w.action];
    row.action = w.action;
    row.values.resize(hs.size(), 0.0);
    ++row.samples;
    ++all.samples;
    for (std::size_t h = 0; h < hs.size(); ++h) {
      row.values[h] += w.values[h];
      all.values[h] += w.values[h];
    }
  }
  EvalReport report;
  report.horizons = hs;
  for (auto& [name, row] : by_action) {
    for (double& v : row.values) v /= static_cast<double>(row.samples);
    report.rows.push_back(row);
  }
  for (double& v : all.values) v /= static_cast<double>(all.samples);
  report.rows.push_back(all);
  return report;
}

inline void print_table(std::ostream& os, const EvalReport& report) {
  char buf[64];
  os << "MPJPE (mm)";
  std::snprintf(buf, sizeof(buf), "%12s %8s", "action", "windows");
  os << '\n' << buf;
  for (const Horizon& h : report.horizons) {
    std::snprintf(buf, sizeof(buf), " %8dms", h.ms);
    os << buf;
  }
  os << '\n';
  for (const ReportRow& row : report.rows) {
    std::snprintf(buf, sizeof(buf), "%12s %8zu", row.action.c_str(), row.samples);
    os << buf;
    for (double v : row.values) {
      std::snprintf(buf, sizeof(buf), " %10.2f", v);
      os << buf;
    }
    os << '\n';
  }
}

namespace detail {

inline std::ofstream open_csv(const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw DataError("cannot write " + path.string());
  return out;
}

inline std::string fmt17(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

}  // namespace detail

/// Columns: action, samples, then one column per horizon named "<ms>ms".
inline void write_report_csv(const std::filesystem::path& path, const EvalReport& report) {
  auto out = detail::open_csv(path);
  out << "action,samples";
  for (const Horizon& h : report.horizons) out << ',' << h.ms << "ms";
  out << '\n';
  for (const ReportRow& row : report.rows) {
    out << row.action << ',' << row.samples;
    for (double v : row.values) out << ',' << detail::fmt17(v);
    out << '\n';
  }
}

/// Columns: sequence, offset, action, then one column per horizon.
inline void write_window_csv(const std::filesystem::path& path, const std::vector<WindowError>& windows,
                             const std::vector<Horizon>& hs) {
  auto out = detail::open_csv(path);
  out << "sequence,offset,action";
  for (const Horizon& h : hs) out << ',' << h.ms << "ms";
  out << '\n';
  for (const WindowError& w : windows) {
    out << w.sequence << ',' << w.offset << ',' << w.action;
    for (double v : w.values) out << ',' << detail::fmt17(v);
    out << '\n';
  }
}

}  // namespace dmsgcn
