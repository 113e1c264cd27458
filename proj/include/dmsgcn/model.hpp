#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"

#include "dmsgcn/errors.hpp"
#include "dmsgcn/layers.hpp"
#include "dmsgcn/parameter.hpp"
#include "dmsgcn/skeleton.hpp"

namespace dmsgcn {

inline constexpr std::array<const char*, 3> kScaleNames{"joint", "bone", "part"};

struct ModelConfig {
  std::size_t observed_frames = 10;   // T
  std::size_t predicted_frames = 25;  // K
  std::size_t hidden_width = 80;
  std::size_t blocks_per_scale = 7;
  std::size_t tcn_layers = 4;
  double dropout = 0.1;
  double alpha = 0.5;
  bool learnable_alpha = false;
  std::array<int, 3> max_hop{2, 2, 2};
  bool residual_decoder = true;
  int scales = 3;
  bool mask_enabled = true;
  bool tgcn_enabled = true;
  bool shared_adjacency = false;  // one A_s per scale instead of one per layer
  bool fuse_hidden = false;       // fuse hidden features, project to 3 channels afterwards
  std::uint64_t seed = 0;
  ScaleHierarchy hierarchy = default_hierarchy();

  std::size_t joints() const { return hierarchy.skeleton(0).size(); }

  void validate() const {
    if (observed_frames < 2) throw ConfigError("observed frames T must be >= 2");
    if (predicted_frames < 1) throw ConfigError("predicted frames K must be >= 1");
    if (hidden_width < 1) throw ConfigError("hidden_width must be >= 1");
    if (tcn_layers < 1) throw ConfigError("tcn_layers must be >= 1");
    if (scales < 1 || scales > 3) throw ConfigError("scales must be 1, 2 or 3, got " + std::to_string(scales));
    if (static_cast<std::size_t>(scales) > hierarchy.levels())
      throw ConfigError("scales=" + std::to_string(scales) + " but hierarchy has " + std::to_string(hierarchy.levels()) +
                        " levels");
    if (!(dropout >= 0.0 && dropout < 1.0)) throw ConfigError("dropout must lie in [0, 1)");
    if (!(alpha >= 0.0 && alpha <= 1.0)) throw ConfigError("alpha must lie in [0, 1]");
    for (int h : max_hop)
      if (h < 0) throw ConfigError("max_hop must be non-negative");
  }
};

inline nlohmann::json hierarchy_to_json(const ScaleHierarchy& h) {
  nlohmann::json j;
  j["parents"] = h.skeleton(0).parents();
  j["names"] = h.skeleton(0).names();
  nlohmann::json levels = nlohmann::json::array();
  for (std::size_t step = 0; step + 1 < h.levels(); ++step)
    levels.push_back({{"groups", h.grouping(step)}, {"names", h.skeleton(step + 1).names()}});
  j["coarse_levels"] = levels;
  return j;
}

inline ScaleHierarchy hierarchy_from_json(const nlohmann::json& j) {
  std::vector<Groups> groupings;
  std::vector<std::vector<std::string>> names;
  for (const auto& level : j.at("coarse_levels")) {
    groupings.push_back(level.at("groups").get<Groups>());
    names.push_back(level.at("names").get<std::vector<std::string>>());
  }
  return ScaleHierarchy(Skeleton(j.at("parents").get<std::vector<int>>(), j.at("names").get<std::vector<std::string>>()),
                        std::move(groupings), std::move(names));
}

inline nlohmann::json to_json(const ModelConfig& c) {
  return nlohmann::json{{"observed_frames", c.observed_frames},
                        {"predicted_frames", c.predicted_frames},
                        {"hidden_width", c.hidden_width},
                        {"blocks_per_scale", c.blocks_per_scale},
                        {"tcn_layers", c.tcn_layers},
                        {"dropout", c.dropout},
                        {"alpha", c.alpha},
                        {"learnable_alpha", c.learnable_alpha},
                        {"max_hop", c.max_hop},
                        {"residual_decoder", c.residual_decoder},
                        {"scales", c.scales},
                        {"mask_enabled", c.mask_enabled},
                        {"tgcn_enabled", c.tgcn_enabled},
                        {"shared_adjacency", c.shared_adjacency},
                        {"fuse_hidden", c.fuse_hidden},
                        {"seed", c.seed},
                        {"hierarchy", hierarchy_to_json(c.hierarchy)}};
}

inline ModelConfig model_config_from_json(const nlohmann::json& j) {
  ModelConfig c;
  j.at("observed_frames").get_to(c.observed_frames);
  j.at("predicted_frames").get_to(c.predicted_frames);
  j.at("hidden_width").get_to(c.hidden_width);
  j.at("blocks_per_scale").get_to(c.blocks_per_scale);
  j.at("tcn_layers").get_to(c.tcn_layers);
  j.at("dropout").get_to(c.dropout);
  j.at("alpha").get_to(c.alpha);
  j.at("learnable_alpha").get_to(c.learnable_alpha);
  j.at("max_hop").get_to(c.max_hop);
  j.at("residual_decoder").get_to(c.residual_decoder);
  j.at("scales").get_to(c.scales);
  j.at("mask_enabled").get_to(c.mask_enabled);
  j.at("tgcn_enabled").get_to(c.tgcn_enabled);
  j.at("shared_adjacency").get_to(c.shared_adjacency);
  j.at("fuse_hidden").get_to(c.fuse_hidden);
  j.at("seed").get_to(c.seed);
  c.hierarchy = hierarchy_from_json(j.at("hierarchy"));
  return c;
}

/// Multi-scale spatio-temporal GCN: pose pyramid -> per-scale STGCN encoders
/// -> coarse-to-fine fusion -> TCN decoder.
template <typename S>
class DMSGCNModel {
 public:
  explicit DMSGCNModel(ModelConfig config) : config_(std::move(config)) {
    config_.validate();
    const ScaleHierarchy& h = config_.hierarchy;
    const std::size_t width = config_.hidden_width;
    const std::uint64_t seed = config_.seed;
    for (int level = 0; level < config_.scales; ++level) {
      const std::string scale = kScaleNames[static_cast<std::size_t>(level)];
      const Skeleton& skel = h.skeleton(static_cast<std::size_t>(level));
      const Mask mask = config_.mask_enabled ? build_mask(skel, config_.max_hop[static_cast<std::size_t>(level)])
                                             : all_ones_mask(skel.size());
      Stream s;
      s.in_proj = Linear<S>::create(params_, scale + ".in", 3, width, seed);
      std::optional<SpatialGraph<S>> shared;
      if (config_.shared_adjacency) {
        shared = init_spatial_adjacency<S>(skel, mask);
        params_.adopt(shared->adjacency, scale + ".A_s");
      }
      for (std::size_t b = 0; b < config_.blocks_per_scale; ++b)
        s.blocks.push_back(make_stgcn_block<S>(params_, scale + ".block" + std::to_string(b), skel, mask,
                                               config_.observed_frames, width, config_.dropout, config_.tgcn_enabled,
                                               seed, shared ? &*shared : nullptr));
      if (!config_.fuse_hidden) s.out_proj = Linear<S>::create(params_, scale + ".out", width, 3, seed);
      streams_.push_back(std::move(s));
    }
    if (config_.scales >= 2) {
      fusion_.alpha = config_.alpha;
      fusion_.up_bone_to_joint = params_.create(
          "fusion.W_21", init::from_doubles<S>(Shape{h.skeleton(0).size(), h.skeleton(1).size()}, h.membership(0)),
          ParamKind::weight);
      if (config_.scales == 3)
        fusion_.up_part_to_bone = params_.create(
            "fusion.W_32", init::from_doubles<S>(Shape{h.skeleton(1).size(), h.skeleton(2).size()}, h.membership(1)),
            ParamKind::weight);
      if (config_.learnable_alpha) {
        const double a = std::clamp(config_.alpha, 1e-6, 1.0 - 1e-6);
        fusion_.alpha_logit =
            params_.create("fusion.alpha_logit", Tensor<S>(Shape{1}, static_cast<S>(std::log(a / (1.0 - a)))),
                           ParamKind::alpha);
      }
    }
    if (config_.fuse_hidden) fused_out_proj_ = Linear<S>::create(params_, "fused.out", width, 3, seed);
    decoder_ = make_decoder<S>(params_, "decoder", config_.observed_frames, config_.predicted_frames,
                               config_.tcn_layers, seed);
    for (std::size_t step = 0; step + 1 < static_cast<std::size_t>(config_.scales); ++step)
      pooling_.push_back(h.pooling_tensor<S>(step));
  }

  const ModelConfig& config() const { return config_; }
  ParameterSet<S>& parameters() { return params_; }
  const ParameterSet<S>& parameters() const { return params_; }
  const FusionUnit<S>& fusion() const { return fusion_; }
  const std::vector<TCNLayer<S>>& decoder() const { return decoder_; }

  /// Trainable entries; masked-out adjacency entries are excluded.
  std::size_t param_count() const { return params_.trainable_count(); }

  /// Zero entries summed over every distinct spatial adjacency mask.
  std::size_t mask_zero_count() const {
    std::size_t n = 0;
    for (const auto& p : params_)
      if (p->freeze_mask)
        for (unsigned char m : *p->freeze_mask) n += m == 0;
    return n;
  }

  /// [B, 3, T, V] -> [B, 3, K, V].
  Tensor<S> forward(const Tensor<S>& batch, const ForwardContext& ctx = {}) const {
    if (batch.rank() != 4 || batch.dim(1) != 3 || batch.dim(2) != config_.observed_frames ||
        batch.dim(3) != config_.joints())
      throw DimensionError("forward: expected [B, 3, " + std::to_string(config_.observed_frames) + ", " +
                           std::to_string(config_.joints()) + "], got " + shape_str(batch.shape()));
    return permute(forward_frames(permute(batch, {0, 2, 3, 1}), ctx), {0, 3, 1, 2});
  }

  /// Frame-major variant: [B, T, V, 3] -> [B, K, V, 3].
  Tensor<S> forward_frames(const Tensor<S>& frames, const ForwardContext& ctx = {}) const {
    if (frames.rank() != 4 || frames.dim(1) != config_.observed_frames || frames.dim(2) != config_.joints() ||
        frames.dim(3) != 3)
      throw DimensionError("forward: expected [B, " + std::to_string(config_.observed_frames) + ", " +
                           std::to_string(config_.joints()) + ", 3], got " + shape_str(frames.shape()));
    std::vector<Tensor<S>> poses{frames};
    for (const auto& p : pooling_) poses.push_back(downsample(poses.back(), p));

    std::vector<Tensor<S>> encoded;
    for (std::size_t s = 0; s < streams_.size(); ++s) encoded.push_back(encode(streams_[s], poses[s], ctx));

    Tensor<S> fused;
    switch (streams_.size()) {
      case 1: fused = encoded[0]; break;
      case 2: fused = fusion_.fuse(encoded[1], encoded[0]); break;
      default: fused = fusion_.fuse(encoded[2], encoded[1], encoded[0]); break;
    }
    if (config_.fuse_hidden) fused = add(frames, fused_out_proj_->forward(fused));

    const Tensor<S> last = select(frames, 1, config_.observed_frames - 1);
    return tcn_decode(fused, decoder_, last, config_.residual_decoder);
  }

  /// Sets every weight matrix and bias to zero; adjacencies, tables and slopes keep their values.
  void zero_weights() {
    for (const auto& p : params_)
      if (p->kind == ParamKind::weight || p->kind == ParamKind::bias)
        std::fill(p->value.data().begin(), p->value.data().end(), S(0));
  }

 private:
  struct Stream {
    Linear<S> in_proj;
    std::vector<STGCNBlock<S>> blocks;
    std::optional<Linear<S>> out_proj;
  };

  // Without fuse_hidden: X + out(blocks(in(X))), a pose-shaped [B, T, V, 3] tensor.
  Tensor<S> encode(const Stream& s, const Tensor<S>& pose, const ForwardContext& ctx) const {
    Tensor<S> h = s.in_proj.forward(pose);
    for (const auto& block : s.blocks) h = block.forward(h, ctx);
    if (!s.out_proj) return h;
    return add(pose, s.out_proj->forward(h));
  }

  ModelConfig config_;
  ParameterSet<S> params_;
  std::vector<Stream> streams_;
  FusionUnit<S> fusion_;
  std::optional<Linear<S>> fused_out_proj_;
  std::vector<TCNLayer<S>> decoder_;
  std::vector<Tensor<S>> pooling_;
};

}  // namespace dmsgcn
