#pragma once

#include <algorithm>
#include <bit>
#include <cmath>
#include <vector>

#include "dmsgcn/errors.hpp"
#include "dmsgcn/tensor.hpp"

namespace dmsgcn {

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::size_t worst_input = 0;
  std::size_t worst_entry = 0;
  double worst_analytic = 0.0;
  double worst_numeric = 0.0;
  std::size_t entries_checked = 0;
};

/// Compares reverse-mode gradients of a scalar fp64 function against central
/// differences. Relative error per entry is
/// |analytic - numeric| / max(1e-8, |analytic| + |numeric|).
///
/// `inputs` must be leaf tensors; they are marked tracked. The active fp64
/// tape is cleared. `stride` > 1 checks every stride-th entry of each input.
template <typename F>
GradCheckResult finite_diff_check(F&& f, std::vector<Tensor<double>> inputs, double eps = 1e-5,
                                  std::size_t stride = 1) {
  auto& tape = active_tape<double>();
  tape.clear();
  for (auto& t : inputs) {
    t.set_tracked(true);
    t.zero_grad();
  }

  Tensor<double> loss = f();
  if (loss.numel() != 1) throw ContractError("finite_diff_check: function must return a scalar");
  const double base = loss.item();
  backward(loss);
  std::vector<std::vector<double>> analytic;
  for (const auto& t : inputs) analytic.emplace_back(t.grad().begin(), t.grad().end());
  tape.clear();

  NoGradGuard no_grad;
  auto eval = [&] { return f().item(); };
  if (std::bit_cast<std::uint64_t>(eval()) != std::bit_cast<std::uint64_t>(base))
    throw ContractError("finite_diff_check: function is not deterministic");

  GradCheckResult result;
  stride = std::max<std::size_t>(stride, 1);
  for (std::size_t k = 0; k < inputs.size(); ++k) {
    auto values = inputs[k].data();
    for (std::size_t i = 0; i < values.size(); i += stride) {
      const double original = values[i];
      values[i] = original + eps;
      const double plus = eval();
      values[i] = original - eps;
      const double minus = eval();
      values[i] = original;
      const double numeric = (plus - minus) / (2.0 * eps);
      const double a = analytic[k][i];
      const double rel = std::abs(a - numeric) / std::max(1e-8, std::abs(a) + std::abs(numeric));
      ++result.entries_checked;
      if (rel > result.max_rel_error || std::isnan(rel)) {
        result.max_rel_error = std::isnan(rel) ? INFINITY : rel;
        result.worst_input = k;
        result.worst_entry = i;
        result.worst_analytic = a;
        result.worst_numeric = numeric;
      }
    }
  }
  for (auto& t : inputs) t.zero_grad();
  return result;
}

/// As finite_diff_check, but the central differences are taken on `g`, a
/// higher-precision twin of `f` whose inputs `ext_inputs` mirror `inputs`
/// entry for entry. Analytic gradients still come from `f` in fp64; the wider
/// type only lowers the rounding floor of the numeric side.
template <typename E, typename F, typename G>
GradCheckResult finite_diff_check_extended(F&& f, std::vector<Tensor<double>> inputs, G&& g,
                                           std::vector<Tensor<E>> ext_inputs, double eps = 1e-6) {
  if (inputs.size() != ext_inputs.size()) throw ContractError("finite_diff_check_extended: input lists differ");
  auto& tape = active_tape<double>();
  tape.clear();
  for (std::size_t k = 0; k < inputs.size(); ++k) {
    if (inputs[k].shape() != ext_inputs[k].shape())
      throw ContractError("finite_diff_check_extended: shape mismatch at input " + std::to_string(k));
    inputs[k].set_tracked(true);
    inputs[k].zero_grad();
    const auto src = inputs[k].data();
    auto dst = ext_inputs[k].data();
    for (std::size_t i = 0; i < src.size(); ++i) dst[i] = static_cast<E>(src[i]);
  }
  Tensor<double> loss = f();
  if (loss.numel() != 1) throw ContractError("finite_diff_check_extended: function must return a scalar");
  backward(loss);
  std::vector<std::vector<double>> analytic;
  for (const auto& t : inputs) analytic.emplace_back(t.grad().begin(), t.grad().end());
  tape.clear();

  NoGradGuard no_grad;
  active_tape<E>().clear();
  auto eval = [&] { return g().item(); };
  const E base = eval();
  if (eval() != base) throw ContractError("finite_diff_check_extended: function is not deterministic");

  GradCheckResult result;
  const E h = static_cast<E>(eps);
  for (std::size_t k = 0; k < ext_inputs.size(); ++k) {
    auto values = ext_inputs[k].data();
    for (std::size_t i = 0; i < values.size(); ++i) {
      const E original = values[i];
      values[i] = original + h;
      const E plus = eval();
      values[i] = original - h;
      const E minus = eval();
      values[i] = original;
      const double numeric = static_cast<double>((plus - minus) / (2 * h));
      const double a = analytic[k][i];
      const double rel = std::abs(a - numeric) / std::max(1e-8, std::abs(a) + std::abs(numeric));
      ++result.entries_checked;
      if (rel > result.max_rel_error || std::isnan(rel)) {
        result.max_rel_error = std::isnan(rel) ? INFINITY : rel;
        result.worst_input = k;
        result.worst_entry = i;
        result.worst_analytic = a;
        result.worst_numeric = numeric;
      }
    }
  }
  for (auto& t : inputs) t.zero_grad();
  return result;
}

}  // namespace dmsgcn
