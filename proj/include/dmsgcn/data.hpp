#pragma once

#include <charconv>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <numbers>
#include <optional>
#include <string>
#include <string_view>
#include <system_error>
#include <vector>

#include "dmsgcn/errors.hpp"
#include "dmsgcn/rng.hpp"
#include "dmsgcn/tensor.hpp"

namespace dmsgcn {

/// F x V x 3 joint positions in millimetres, frame-major.
struct MotionSequence {
  std::size_t frames = 0;
  std::size_t joints = 0;
  std::vector<float> values;
  double fps = 25.0;
  std::string source;
  std::string action = "all";

  float at(std::size_t f, std::size_t v, std::size_t c) const { return values[(f * joints + v) * 3 + c]; }
  std::span<const float> frame(std::size_t f) const {
    return std::span<const float>(values).subspan(f * joints * 3, joints * 3);
  }
};

/// One observed/target pair cut from a sequence at `offset`.
struct WindowSample {
  std::vector<float> observed;  // T x V x 3
  std::vector<float> target;    // K x V x 3
  std::size_t observed_frames = 0;
  std::size_t predicted_frames = 0;
  std::size_t joints = 0;
  std::string sequence;
  std::string action = "all";
  std::size_t offset = 0;
};

class CsvColumnError : public DataError {
 public:
  using DataError::DataError;
};
class CsvValueError : public DataError {
 public:
  using DataError::DataError;
};
class EmptyFileError : public DataError {
 public:
  using DataError::DataError;
};

struct CsvSchema {
  bool header = false;                  // first line holds column names
  std::optional<std::size_t> joints;    // expected V (3V columns); inferred from the first row otherwise
};

namespace detail {

inline std::vector<std::string_view> split_cells(std::string_view line) {
  std::vector<std::string_view> cells;
  std::size_t start = 0;
  for (;;) {
    const std::size_t comma = line.find(',', start);
    cells.push_back(line.substr(start, comma == std::string_view::npos ? std::string_view::npos : comma - start));
    if (comma == std::string_view::npos) break;
    start = comma + 1;
  }
  return cells;
}

inline std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  return s;
}

}  // namespace detail

/// Reads pose CSV: one frame per row, 3V columns (x, y, z per joint). A blank
/// line starts a new sequence. Errors carry 1-based line numbers.
inline std::vector<MotionSequence> load_csv(const std::filesystem::path& path, const CsvSchema& schema = {}) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open " + path.string());
  std::vector<MotionSequence> out;
  std::optional<std::size_t> columns;
  if (schema.joints) columns = *schema.joints * 3;
  MotionSequence current;
  auto flush = [&] {
    if (current.frames == 0) return;
    current.source = path.stem().string() + (out.empty() ? "" : "#" + std::to_string(out.size()));
    out.push_back(std::move(current));
    current = MotionSequence{};
  };
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line_no == 1 && schema.header) continue;
    const std::string_view row = detail::trim(line);
    if (row.empty()) {
      flush();
      continue;
    }
    const auto cells = detail::split_cells(row);
    if (!columns) {
      if (cells.size() % 3 != 0)
        throw CsvColumnError(path.string() + ":" + std::to_string(line_no) + ": " + std::to_string(cells.size()) +
                             " columns is not a multiple of 3");
      columns = cells.size();
    }
    if (cells.size() != *columns)
      throw CsvColumnError(path.string() + ":" + std::to_string(line_no) + ": expected " + std::to_string(*columns) +
                           " columns, got " + std::to_string(cells.size()));
    for (std::size_t c = 0; c < cells.size(); ++c) {
      const std::string_view cell = detail::trim(cells[c]);
      float v = 0.0f;
      const auto [ptr, ec] = std::from_chars(cell.data(), cell.data() + cell.size(), v);
      if (ec != std::errc{} || ptr != cell.data() + cell.size() || cell.empty() || !std::isfinite(v))
        throw CsvValueError(path.string() + ":" + std::to_string(line_no) + ": column " + std::to_string(c + 1) +
                            " is not a finite number: '" + std::string(cell) + "'");
      current.values.push_back(v);
    }
    current.joints = *columns / 3;
    ++current.frames;
  }
  flush();
  if (out.empty()) throw EmptyFileError(path.string() + " contains no frames");
  return out;
}

/// Writes shortest round-trip decimal representations, so reading back is lossless.
inline void write_csv(const std::filesystem::path& path, const MotionSequence& seq) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw DataError("cannot write " + path.string());
  char buf[32];
  for (std::size_t f = 0; f < seq.frames; ++f) {
    const auto row = seq.frame(f);
    for (std::size_t i = 0; i < row.size(); ++i) {
      const auto res = std::to_chars(buf, buf + sizeof(buf), row[i]);
      if (i) out.put(',');
      out.write(buf, res.ptr - buf);
    }
    out.put('\n');
  }
  if (!out) throw DataError("failed writing " + path.string());
}

inline MotionSequence select_joints(const MotionSequence& seq, const std::vector<std::size_t>& indices) {
  std::vector<bool> seen(seq.joints, false);
  for (std::size_t j : indices) {
    if (j >= seq.joints)
      throw ValidationError("joint index " + std::to_string(j) + " out of range for " + std::to_string(seq.joints) + " joints");
    if (seen[j]) throw ValidationError("joint index " + std::to_string(j) + " selected twice");
    seen[j] = true;
  }
  if (indices.empty()) throw ValidationError("joint selection is empty");
  MotionSequence out = seq;
  out.joints = indices.size();
  out.values.assign(seq.frames * indices.size() * 3, 0.0f);
  for (std::size_t f = 0; f < seq.frames; ++f)
    for (std::size_t k = 0; k < indices.size(); ++k)
      for (std::size_t c = 0; c < 3; ++c) out.values[(f * out.joints + k) * 3 + c] = seq.at(f, indices[k], c);
  return out;
}

/// Sidecar action manifest: one "source,action" pair per line, where source is
/// a MotionSequence::source ("walk" or "walk#1" for the second block of walk.csv).
/// A first line of exactly "source,action" is a header.
inline std::map<std::string, std::string> load_action_manifest(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open action manifest " + path.string());
  std::map<std::string, std::string> labels;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const std::string_view row = detail::trim(line);
    if (row.empty() || (line_no == 1 && row == "source,action")) continue;
    const auto cells = detail::split_cells(row);
    if (cells.size() != 2)
      throw CsvColumnError(path.string() + ":" + std::to_string(line_no) + ": expected 2 columns, got " +
                           std::to_string(cells.size()));
    const std::string source(detail::trim(cells[0])), action(detail::trim(cells[1]));
    if (source.empty() || action.empty())
      throw CsvValueError(path.string() + ":" + std::to_string(line_no) + ": empty source or action");
    labels[source] = action;
  }
  return labels;
}

/// Sequences absent from the manifest keep their current label.
inline void apply_action_manifest(std::vector<MotionSequence>& seqs, const std::map<std::string, std::string>& labels) {
  for (MotionSequence& seq : seqs)
    if (const auto it = labels.find(seq.source); it != labels.end()) seq.action = it->second;
}

/// Subtracts the sequence's mean position (over all frames and joints).
inline void center_sequence(MotionSequence& seq) {
  double mean[3] = {0, 0, 0};
  const std::size_t points = seq.frames * seq.joints;
  for (std::size_t p = 0; p < points; ++p)
    for (std::size_t c = 0; c < 3; ++c) mean[c] += seq.values[p * 3 + c];
  for (double& m : mean) m /= static_cast<double>(points);
  for (std::size_t p = 0; p < points; ++p)
    for (std::size_t c = 0; c < 3; ++c) seq.values[p * 3 + c] = static_cast<float>(seq.values[p * 3 + c] - mean[c]);
}

/// All windows of T observed + K target frames starting at multiples of stride.
inline std::vector<WindowSample> windows(const MotionSequence& seq, std::size_t observed, std::size_t predicted,
                                         std::size_t stride = 1) {
  if (stride == 0) throw ConfigError("window stride must be >= 1");
  std::vector<WindowSample> out;
  const std::size_t span = observed + predicted;
  if (seq.frames < span) return out;
  const std::size_t per_frame = seq.joints * 3;
  for (std::size_t start = 0; start + span <= seq.frames; start += stride) {
    WindowSample w;
    w.observed_frames = observed;
    w.predicted_frames = predicted;
    w.joints = seq.joints;
    w.sequence = seq.source;
    w.action = seq.action;
    w.offset = start;
    const auto first = seq.values.begin() + static_cast<std::ptrdiff_t>(start * per_frame);
    w.observed.assign(first, first + static_cast<std::ptrdiff_t>(observed * per_frame));
    w.target.assign(first + static_cast<std::ptrdiff_t>(observed * per_frame),
                    first + static_cast<std::ptrdiff_t>(span * per_frame));
    out.push_back(std::move(w));
  }
  return out;
}

/// Sinusoidal joint trajectories:
///   x[f, v, c] = A sin(2 pi w f / fps + phi) + offset
/// with (A, w, phi, offset) drawn per (v, c) from the ranges below.
struct SyntheticSpec {
  std::uint64_t seed = 0;
  std::size_t joints = 22;
  std::size_t frames = 100;
  double fps = 25.0;
  double amplitude_min = 20.0, amplitude_max = 150.0;  // mm
  double frequency_min = 0.2, frequency_max = 0.8;     // Hz
  double phase_min = 0.0, phase_max = 2.0 * std::numbers::pi;
  double offset_min = -500.0, offset_max = 500.0;  // mm
  std::optional<std::uint64_t> rest_pose_seed;       // offsets drawn from this seed instead, shared across sequences
  double frequency_scale = 1.0;
  std::string action = "all";
};

inline MotionSequence synth_generate(const SyntheticSpec& spec) {
  if (spec.joints == 0 || spec.frames == 0 || !(spec.fps > 0)) throw ConfigError("synthetic spec needs joints, frames, fps > 0");
  const Philox rng(spec.seed, hash_name("synthetic-motion"));
  const Philox rest(spec.rest_pose_seed.value_or(0), hash_name("synthetic-rest-pose"));
  MotionSequence seq;
  seq.frames = spec.frames;
  seq.joints = spec.joints;
  seq.fps = spec.fps;
  seq.action = spec.action;
  seq.source = "synthetic-" + std::to_string(spec.seed);
  seq.values.resize(spec.frames * spec.joints * 3);
  auto draw = [&](std::size_t channel, std::size_t k, double lo, double hi) {
    return lo + (hi - lo) * rng.uniform_double(channel * 4 + k);
  };
  for (std::size_t ch = 0; ch < spec.joints * 3; ++ch) {
    const double amplitude = draw(ch, 0, spec.amplitude_min, spec.amplitude_max);
    const double frequency = draw(ch, 1, spec.frequency_min, spec.frequency_max) * spec.frequency_scale;
    const double phase = draw(ch, 2, spec.phase_min, spec.phase_max);
    const double offset = spec.rest_pose_seed ? rest.uniform_double(ch) * (spec.offset_max - spec.offset_min) + spec.offset_min
                                              : draw(ch, 3, spec.offset_min, spec.offset_max);
    for (std::size_t f = 0; f < spec.frames; ++f) {
      const double angle = 2.0 * std::numbers::pi * (frequency * static_cast<double>(f)) / spec.fps + phase;
      seq.values[f * spec.joints * 3 + ch] = static_cast<float>(amplitude * std::sin(angle) + offset);
    }
  }
  return seq;
}

/// Index batches in source order, or in a Fisher-Yates order keyed by `shuffle_seed`.
/// The last batch may be partial.
inline std::vector<std::vector<std::size_t>> batch_indices(std::size_t count, std::size_t batch_size,
                                                           std::optional<std::uint64_t> shuffle_seed = std::nullopt) {
  if (batch_size == 0) throw ConfigError("batch size must be >= 1");
  std::vector<std::size_t> order(count);
  for (std::size_t i = 0; i < count; ++i) order[i] = i;
  if (shuffle_seed) {
    CounterRng rng(*shuffle_seed, hash_name("shuffle"));
    for (std::size_t i = count; i > 1; --i) std::swap(order[i - 1], order[rng.below(i)]);
  }
  std::vector<std::vector<std::size_t>> batches;
  for (std::size_t i = 0; i < count; i += batch_size)
    batches.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(i),
                         order.begin() + static_cast<std::ptrdiff_t>(std::min(count, i + batch_size)));
  return batches;
}

template <typename S>
struct Batch {
  Tensor<S> observed;  // [B, T, V, 3]
  Tensor<S> target;    // [B, K, V, 3]
};

template <typename S>
Batch<S> make_batch(const std::vector<WindowSample>& samples, const std::vector<std::size_t>& indices) {
  if (indices.empty()) throw ContractError("make_batch: empty batch");
  const WindowSample& first = samples.at(indices.front());
  const std::size_t t = first.observed_frames, k = first.predicted_frames, v = first.joints;
  Batch<S> b{Tensor<S>(Shape{indices.size(), t, v, 3}), Tensor<S>(Shape{indices.size(), k, v, 3})};
  for (std::size_t i = 0; i < indices.size(); ++i) {
    const WindowSample& w = samples.at(indices[i]);
    if (w.observed_frames != t || w.predicted_frames != k || w.joints != v)
      throw DimensionError("make_batch: windows of different sizes in one batch");
    std::copy(w.observed.begin(), w.observed.end(), b.observed.data().begin() + static_cast<std::ptrdiff_t>(i * t * v * 3));
    std::copy(w.target.begin(), w.target.end(), b.target.data().begin() + static_cast<std::ptrdiff_t>(i * k * v * 3));
  }
  return b;
}

}  // namespace dmsgcn
