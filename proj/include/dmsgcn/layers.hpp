#pragma once

#include <cmath>
#include <cstdint>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "dmsgcn/errors.hpp"
#include "dmsgcn/graph.hpp"
#include "dmsgcn/ops.hpp"
#include "dmsgcn/parameter.hpp"
#include "dmsgcn/rng.hpp"

namespace dmsgcn {

/// Per-forward settings. Dropout masks derive from (seed, step, layer tag).
struct ForwardContext {
  bool training = false;
  std::uint64_t seed = 0;
  std::uint64_t step = 0;

  std::uint64_t dropout_seed(std::uint64_t tag) const { return mix_seed(mix_seed(seed, step), tag); }
};

template <typename S>
using ParamPtr = std::shared_ptr<Parameter<S>>;

namespace init {

/// Uniform in +-1/sqrt(fan_in); the stream is keyed by (seed, name).
template <typename S>
Tensor<S> uniform_fan_in(Shape shape, std::size_t fan_in, std::uint64_t seed, const std::string& name) {
  Tensor<S> t(std::move(shape));
  const Philox rng(seed, hash_name(name));
  const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
  auto d = t.data();
  for (std::size_t i = 0; i < d.size(); ++i) d[i] = static_cast<S>((2.0 * rng.uniform_double(i) - 1.0) * bound);
  return t;
}

template <typename S>
Tensor<S> identity(std::size_t n) {
  Tensor<S> t(Shape{n, n});
  for (std::size_t i = 0; i < n; ++i) t.data()[i * n + i] = S(1);
  return t;
}

template <typename S>
Tensor<S> from_doubles(Shape shape, const std::vector<double>& values) {
  return Tensor<S>(std::move(shape), std::vector<S>(values.begin(), values.end()));
}

}  // namespace init

inline constexpr double kDefaultPreluSlope = 0.25;

/// Affine map on the last axis: x W + b.
template <typename S>
struct Linear {
  ParamPtr<S> weight;
  ParamPtr<S> bias;

  static Linear create(ParameterSet<S>& params, const std::string& prefix, std::size_t in, std::size_t out,
                       std::uint64_t seed) {
    Linear l;
    l.weight = params.create(prefix + ".W", init::uniform_fan_in<S>(Shape{in, out}, in, seed, prefix + ".W"),
                             ParamKind::weight);
    l.bias = params.create(prefix + ".b", Tensor<S>(Shape{out}), ParamKind::bias);
    return l;
  }

  Tensor<S> forward(const Tensor<S>& x) const { return add_bias(matmul(x, weight->value), bias->value); }
};

/// Masked spatial graph convolution on [..., T, V, C_in]:
/// per frame, act(T_s (A_s o M) H_t W_s), followed by dropout in training.
template <typename S>
struct SGCNLayer {
  SpatialGraph<S> graph;
  ParamPtr<S> table;   // T_s, V x V, shared across frames
  ParamPtr<S> weight;  // W_s, C_in x C_out
  ParamPtr<S> slope;   // PReLU
  double dropout_rate = 0.0;
  std::uint64_t tag = 0;

  /// Creates a layer with its own adjacency, or reuses `shared` (registered by its first user).
  static SGCNLayer create(ParameterSet<S>& params, const std::string& prefix, const Skeleton& skel, const Mask& mask,
                          std::size_t c_in, std::size_t c_out, double dropout_rate, std::uint64_t seed,
                          const SpatialGraph<S>* shared = nullptr) {
    SGCNLayer l;
    if (shared) {
      l.graph = *shared;
    } else {
      l.graph = init_spatial_adjacency<S>(skel, mask);
      params.adopt(l.graph.adjacency, prefix + ".A_s");
    }
    const std::size_t v = skel.size();
    l.table = params.create(prefix + ".T_s", init::identity<S>(v), ParamKind::table);
    l.weight = params.create(prefix + ".W_s", init::uniform_fan_in<S>(Shape{c_in, c_out}, c_in, seed, prefix + ".W_s"),
                             ParamKind::weight);
    l.slope = params.create(prefix + ".prelu", Tensor<S>(Shape{1}, static_cast<S>(kDefaultPreluSlope)), ParamKind::slope);
    l.dropout_rate = dropout_rate;
    l.tag = hash_name(prefix);
    return l;
  }

  std::size_t joints() const { return graph.size(); }
  std::size_t in_width() const { return weight->value.dim(0); }
  std::size_t out_width() const { return weight->value.dim(1); }

  Tensor<S> forward(const Tensor<S>& h, const ForwardContext& ctx) const {
    if (h.rank() < 3 || h.dim(-2) != joints() || h.dim(-1) != in_width())
      throw DimensionError("sgcn: expected [..., T, " + std::to_string(joints()) + ", " + std::to_string(in_width()) +
                           "], got " + shape_str(h.shape()));
    const Tensor<S> propagation = matmul(table->value, hadamard(graph.adjacency->value, graph.mask_tensor));
    Tensor<S> y = matmul(mix_axis(propagation, h, -2), weight->value);
    y = prelu(y, slope->value);
    return dropout(y, dropout_rate, ctx.training, ctx.dropout_seed(tag));
  }
};

/// Temporal graph convolution on [..., T, V, C_in]:
/// per joint, act(T_t A_t H_v W_t), followed by dropout in training.
template <typename S>
struct TGCNLayer {
  TemporalGraph<S> graph;
  ParamPtr<S> table;   // T_t, T x T, shared across joints
  ParamPtr<S> weight;  // W_t
  ParamPtr<S> slope;
  double dropout_rate = 0.0;
  std::uint64_t tag = 0;

  static TGCNLayer create(ParameterSet<S>& params, const std::string& prefix, std::size_t frames, std::size_t c_in,
                          std::size_t c_out, double dropout_rate, std::uint64_t seed) {
    TGCNLayer l;
    l.graph = init_temporal_adjacency<S>(frames);
    params.adopt(l.graph.adjacency, prefix + ".A_t");
    l.table = params.create(prefix + ".T_t", init::identity<S>(frames), ParamKind::table);
    l.weight = params.create(prefix + ".W_t", init::uniform_fan_in<S>(Shape{c_in, c_out}, c_in, seed, prefix + ".W_t"),
                             ParamKind::weight);
    l.slope = params.create(prefix + ".prelu", Tensor<S>(Shape{1}, static_cast<S>(kDefaultPreluSlope)), ParamKind::slope);
    l.dropout_rate = dropout_rate;
    l.tag = hash_name(prefix);
    return l;
  }

  std::size_t frames() const { return graph.size(); }
  std::size_t in_width() const { return weight->value.dim(0); }

  Tensor<S> forward(const Tensor<S>& h, const ForwardContext& ctx) const {
    if (h.rank() < 3 || h.dim(-3) != frames() || h.dim(-1) != in_width())
      throw DimensionError("tgcn: expected [..., " + std::to_string(frames()) + ", V, " + std::to_string(in_width()) +
                           "], got " + shape_str(h.shape()));
    const Tensor<S> propagation = matmul(table->value, graph.adjacency->value);
    Tensor<S> y = matmul(mix_axis(propagation, h, -3), weight->value);
    y = prelu(y, slope->value);
    return dropout(y, dropout_rate, ctx.training, ctx.dropout_seed(tag));
  }
};

/// H + TGCN(SGCN(H)); without a TGCN layer the temporal step is the identity.
template <typename S>
struct STGCNBlock {
  SGCNLayer<S> sgcn;
  std::optional<TGCNLayer<S>> tgcn;

  std::size_t width() const { return sgcn.in_width(); }

  Tensor<S> forward(const Tensor<S>& h, const ForwardContext& ctx) const {
    if (h.rank() < 3 || h.dim(-1) != width())
      throw ConfigError("stgcn block of width " + std::to_string(width()) + " got input " + shape_str(h.shape()));
    Tensor<S> y = sgcn.forward(h, ctx);
    if (tgcn) y = tgcn->forward(y, ctx);
    return add(h, y);
  }
};

template <typename S>
STGCNBlock<S> make_stgcn_block(ParameterSet<S>& params, const std::string& prefix, const Skeleton& skel,
                               const Mask& mask, std::size_t frames, std::size_t width, double dropout_rate,
                               bool with_tgcn, std::uint64_t seed, const SpatialGraph<S>* shared = nullptr) {
  STGCNBlock<S> b{SGCNLayer<S>::create(params, prefix + ".sgcn", skel, mask, width, width, dropout_rate, seed, shared),
                  std::nullopt};
  if (with_tgcn) b.tgcn = TGCNLayer<S>::create(params, prefix + ".tgcn", frames, width, width, dropout_rate, seed);
  return b;
}

/// Coarse-to-fine fusion along the joint axis:
///   X2+ = a W_32 X3 + (1 - a) X2,   X+ = a W_21 X2+ + (1 - a) X1.
/// With two scales only the second line applies (X2+ = X2).
template <typename S>
struct FusionUnit {
  ParamPtr<S> up_part_to_bone;   // W_32, V_bone x V_part (absent with two scales)
  ParamPtr<S> up_bone_to_joint;  // W_21, V_joint x V_bone
  double alpha = 0.5;
  ParamPtr<S> alpha_logit;  // set when alpha is learned: a = sigmoid(logit)

  Tensor<S> coefficient() const {
    if (alpha_logit) return sigmoid(alpha_logit->value);
    return Tensor<S>::scalar(static_cast<S>(alpha));
  }

  Tensor<S> fuse(const Tensor<S>& part, const Tensor<S>& bone, const Tensor<S>& joint) const {
    if (!up_part_to_bone) throw ConfigError("fuse: unit was built without a part-scale map");
    check("part", part, up_part_to_bone->value.dim(1));
    check("bone", bone, up_part_to_bone->value.dim(0));
    check("joint", joint, up_bone_to_joint->value.dim(0));
    if (part.dim(-1) != bone.dim(-1) || bone.dim(-1) != joint.dim(-1))
      throw DimensionError("fuse: feature widths differ: " + shape_str(part.shape()) + ", " + shape_str(bone.shape()) +
                           ", " + shape_str(joint.shape()));
    const Tensor<S> a = coefficient();
    const Tensor<S> bone_fused = lerp(bone, mix_axis(up_part_to_bone->value, part, -2), a);
    return lerp(joint, mix_axis(up_bone_to_joint->value, bone_fused, -2), a);
  }

  Tensor<S> fuse(const Tensor<S>& bone, const Tensor<S>& joint) const {
    check("bone", bone, up_bone_to_joint->value.dim(1));
    check("joint", joint, up_bone_to_joint->value.dim(0));
    if (bone.dim(-1) != joint.dim(-1))
      throw DimensionError("fuse: feature widths differ: " + shape_str(bone.shape()) + ", " + shape_str(joint.shape()));
    return lerp(joint, mix_axis(up_bone_to_joint->value, bone, -2), coefficient());
  }

 private:
  static void check(const char* what, const Tensor<S>& x, std::size_t joints) {
    if (x.rank() < 2 || x.dim(-2) != joints)
      throw DimensionError(std::string("fuse: ") + what + " features must have " + std::to_string(joints) +
                           " joints, got " + shape_str(x.shape()));
  }
};

/// Time-channel mixing shared by all joints and coordinates: weight[T_out x T_in]
/// applied along the frame axis, plus a per-output-frame bias.
template <typename S>
struct TCNLayer {
  ParamPtr<S> weight;
  ParamPtr<S> bias;
  ParamPtr<S> slope;  // absent on the final layer

  std::size_t in_frames() const { return weight->value.dim(1); }
  std::size_t out_frames() const { return weight->value.dim(0); }

  Tensor<S> linear(const Tensor<S>& x) const { return add_bias(mix_axis(weight->value, x, -3), bias->value, -3); }
};

template <typename S>
std::vector<TCNLayer<S>> make_decoder(ParameterSet<S>& params, const std::string& prefix, std::size_t observed,
                                      std::size_t predicted, std::size_t layers, std::uint64_t seed) {
  if (layers == 0) throw ConfigError("decoder needs at least one TCN layer");
  std::vector<TCNLayer<S>> out;
  for (std::size_t i = 0; i < layers; ++i) {
    const std::size_t in = i == 0 ? observed : predicted;
    const std::string name = prefix + "." + std::to_string(i);
    TCNLayer<S> l;
    l.weight = params.create(name + ".W", init::uniform_fan_in<S>(Shape{predicted, in}, in, seed, name + ".W"),
                             ParamKind::weight);
    l.bias = params.create(name + ".b", Tensor<S>(Shape{predicted}), ParamKind::bias);
    if (i + 1 < layers)
      l.slope = params.create(name + ".prelu", Tensor<S>(Shape{1}, static_cast<S>(kDefaultPreluSlope)), ParamKind::slope);
    out.push_back(std::move(l));
  }
  return out;
}

/// Decodes [..., T, V, C] features into [..., K, V, C] frames. Layer 1 maps T
/// frames to K, later layers are residual K -> K maps, PReLU between layers.
/// With `residual`, `last_observed` [..., V, C] is added to every output frame.
template <typename S>
Tensor<S> tcn_decode(const Tensor<S>& features, const std::vector<TCNLayer<S>>& decoder, const Tensor<S>& last_observed,
                     bool residual) {
  if (decoder.empty()) throw ConfigError("tcn_decode: empty decoder");
  if (features.rank() < 3 || features.dim(-3) != decoder.front().in_frames())
    throw DimensionError("tcn_decode: expected " + std::to_string(decoder.front().in_frames()) +
                         " observed frames, got " + shape_str(features.shape()));
  Tensor<S> h = features;
  for (std::size_t i = 0; i < decoder.size(); ++i) {
    const TCNLayer<S>& layer = decoder[i];
    Tensor<S> z = layer.linear(h);
    if (layer.slope) z = prelu(z, layer.slope->value);
    h = i == 0 ? z : add(h, z);
  }
  if (!residual) return h;
  Shape expected = features.shape();
  expected.erase(expected.end() - 3);
  if (last_observed.shape() != expected)
    throw DimensionError("tcn_decode: last observed frame must be " + shape_str(expected) + ", got " +
                         shape_str(last_observed.shape()));
  return add(h, broadcast(last_observed, h.rank() - 3, h.dim(-3)));
}

}  // namespace dmsgcn
