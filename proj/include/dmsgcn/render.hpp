#pragma once

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <span>
#include <string>
#include <vector>

#include "dmsgcn/data.hpp"
#include "dmsgcn/errors.hpp"
#include "dmsgcn/skeleton.hpp"

namespace dmsgcn {

/// Fixed orthographic view: canvas = origin + scale * (coord[u], sign * coord[v]).
/// No fitting to the pose, so a translated pose lands translated on the canvas.
struct RenderConfig {
  double width = 480.0;
  double height = 480.0;
  double scale = 0.2;  // px per mm
  double origin_x = 240.0;
  double origin_y = 240.0;
  int axis_u = 0;
  int axis_v = 1;
  bool flip_v = true;  // SVG y grows downwards
  double joint_radius = 3.0;
  double stroke_width = 2.0;
};

struct CanvasPoint {
  double x = 0.0;
  double y = 0.0;
};

inline CanvasPoint project(std::span<const float> joint, const RenderConfig& cfg) {
  const double u = joint[static_cast<std::size_t>(cfg.axis_u)];
  const double v = joint[static_cast<std::size_t>(cfg.axis_v)];
  return {cfg.origin_x + cfg.scale * u, cfg.origin_y + (cfg.flip_v ? -1.0 : 1.0) * cfg.scale * v};
}

/// One pose (V x 3) as an SVG document: V-1 bone lines, then V joint circles.
inline std::string render_svg(std::span<const float> pose, const Skeleton& skel, const RenderConfig& cfg = {}) {
  if (pose.size() != skel.size() * 3)
    throw DimensionError("render: pose has " + std::to_string(pose.size() / 3) + " joints, skeleton has " +
                         std::to_string(skel.size()));
  if (cfg.axis_u < 0 || cfg.axis_u > 2 || cfg.axis_v < 0 || cfg.axis_v > 2 || cfg.axis_u == cfg.axis_v)
    throw ConfigError("render: projection axes must be two distinct values in {0, 1, 2}");
  std::vector<CanvasPoint> pts;
  for (std::size_t j = 0; j < skel.size(); ++j) pts.push_back(project(pose.subspan(j * 3, 3), cfg));
  std::string svg;
  char buf[256];
  std::snprintf(buf, sizeof(buf),
                "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"%.3f\" height=\"%.3f\" viewBox=\"0 0 %.3f %.3f\">\n",
                cfg.width, cfg.height, cfg.width, cfg.height);
  svg += buf;
  std::snprintf(buf, sizeof(buf), "<g stroke=\"#1f4e79\" stroke-width=\"%.3f\" stroke-linecap=\"round\">\n",
                cfg.stroke_width);
  svg += buf;
  for (const auto& [a, b] : skel.edges()) {
    std::snprintf(buf, sizeof(buf), "<line x1=\"%.3f\" y1=\"%.3f\" x2=\"%.3f\" y2=\"%.3f\"/>\n", pts[a].x, pts[a].y,
                  pts[b].x, pts[b].y);
    svg += buf;
  }
  svg += "</g>\n<g fill=\"#c0392b\">\n";
  for (const CanvasPoint& p : pts) {
    std::snprintf(buf, sizeof(buf), "<circle cx=\"%.3f\" cy=\"%.3f\" r=\"%.3f\"/>\n", p.x, p.y, cfg.joint_radius);
    svg += buf;
  }
  svg += "</g>\n</svg>\n";
  return svg;
}

/// Writes <prefix>_<frame>.svg for each requested frame (all frames when empty).
inline std::vector<std::filesystem::path> render_frames(const MotionSequence& seq, const Skeleton& skel,
                                                        const std::filesystem::path& out_dir, const std::string& prefix,
                                                        std::vector<std::size_t> frames = {},
                                                        const RenderConfig& cfg = {}) {
  if (seq.joints != skel.size())
    throw DimensionError("render: sequence has " + std::to_string(seq.joints) + " joints, skeleton has " +
                         std::to_string(skel.size()));
  if (frames.empty())
    for (std::size_t f = 0; f < seq.frames; ++f) frames.push_back(f);
  std::filesystem::create_directories(out_dir);
  std::vector<std::filesystem::path> written;
  for (std::size_t f : frames) {
    if (f >= seq.frames) throw DataError("render: frame " + std::to_string(f) + " out of range");
    char name[64];
    std::snprintf(name, sizeof(name), "_%04zu.svg", f);
    const auto path = out_dir / (prefix + name);
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    out << render_svg(seq.frame(f), skel, cfg);
    if (!out) throw DataError("cannot write " + path.string());
    written.push_back(path);
  }
  return written;
}

}  // namespace dmsgcn
