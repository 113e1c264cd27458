#pragma once

#include <cmath>
#include <memory>
#include <string>
#include <vector>

#include "dmsgcn/errors.hpp"
#include "dmsgcn/parameter.hpp"
#include "dmsgcn/skeleton.hpp"

namespace dmsgcn {

/// Learnable spatial adjacency restricted by a fixed mask. The adjacency
/// parameter's freeze mask equals the mask, so masked-out entries stay at their
/// initial value of zero for the whole run.
template <typename S>
struct SpatialGraph {
  std::shared_ptr<Parameter<S>> adjacency;
  Mask mask;
  Tensor<S> mask_tensor;  // constant, untracked

  std::size_t size() const { return mask.size; }
};

/// Learnable T x T temporal adjacency over the observed frames.
template <typename S>
struct TemporalGraph {
  std::shared_ptr<Parameter<S>> adjacency;

  std::size_t size() const { return adjacency->value.dim(0); }
};

/// D^{-1/2} (A + I) D^{-1/2} of the kinematic tree, row-major V x V.
inline std::vector<double> normalized_adjacency(const Skeleton& skel) {
  const std::size_t v = skel.size();
  std::vector<double> a(v * v, 0.0);
  for (std::size_t i = 0; i < v; ++i) a[i * v + i] = 1.0;
  for (auto [i, j] : skel.edges()) {
    a[i * v + j] = 1.0;
    a[j * v + i] = 1.0;
  }
  std::vector<double> inv_sqrt_deg(v, 0.0);
  for (std::size_t i = 0; i < v; ++i) {
    double deg = 0.0;
    for (std::size_t j = 0; j < v; ++j) deg += a[i * v + j];
    inv_sqrt_deg[i] = 1.0 / std::sqrt(deg);
  }
  for (std::size_t i = 0; i < v; ++i)
    for (std::size_t j = 0; j < v; ++j) a[i * v + j] *= inv_sqrt_deg[i] * inv_sqrt_deg[j];
  return a;
}

template <typename S>
SpatialGraph<S> init_spatial_adjacency(const Skeleton& skel, const Mask& mask, std::string name = "A_s") {
  if (mask.size != skel.size())
    throw DimensionError("mask is " + std::to_string(mask.size) + "x" + std::to_string(mask.size) +
                         " but skeleton has " + std::to_string(skel.size()) + " joints");
  const auto norm = normalized_adjacency(skel);
  const std::size_t v = skel.size();
  Tensor<S> init(Shape{v, v});
  for (std::size_t i = 0; i < norm.size(); ++i) init.data()[i] = mask.bits[i] ? static_cast<S>(norm[i]) : S(0);
  init.set_tracked(true);
  auto param = std::make_shared<Parameter<S>>(Parameter<S>{std::move(name), std::move(init), ParamKind::adjacency, mask.bits});
  return SpatialGraph<S>{std::move(param), mask, mask.tensor<S>()};
}

/// Row-normalized chain graph (each frame linked to itself and its immediate
/// neighbours), fully trainable.
template <typename S>
TemporalGraph<S> init_temporal_adjacency(std::size_t frames, std::string name = "A_t") {
  if (frames < 2) throw ConfigError("temporal graph needs at least 2 frames, got " + std::to_string(frames));
  Tensor<S> init(Shape{frames, frames});
  for (std::size_t t = 0; t < frames; ++t) {
    const std::size_t lo = t == 0 ? 0 : t - 1;
    const std::size_t hi = std::min(frames - 1, t + 1);
    const S w = S(1) / static_cast<S>(hi - lo + 1);
    for (std::size_t u = lo; u <= hi; ++u) init.data()[t * frames + u] = w;
  }
  init.set_tracked(true);
  auto param = std::make_shared<Parameter<S>>(Parameter<S>{std::move(name), std::move(init), ParamKind::adjacency, std::nullopt});
  return TemporalGraph<S>{std::move(param)};
}

}  // namespace dmsgcn
