#pragma once

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <istream>
#include <optional>
#include <ostream>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "dmsgcn/errors.hpp"
#include "dmsgcn/skeleton.hpp"

// Skeleton/hierarchy file (INI):
//
//   [skeleton]
//   parents = 8,0,1,...          ; -1 marks the root
//   names = RightKnee,RightAnkle,...
//   selection = 2,3,4,...         ; optional: source CSV joints kept, in order
//
//   [level1]                      ; first coarsening, then [level2], ...
//   names = right_shin,...
//   groups = 0 1; 2 3; ...        ; fine joints per coarse joint, ';' separated
//
// Unknown sections or keys are errors.

namespace dmsgcn {

struct SkeletonConfig {
  ScaleHierarchy hierarchy;
  std::optional<std::vector<std::size_t>> selection;
};

namespace detail {

inline std::vector<std::string> split_list(const std::string& text, char sep) {
  std::vector<std::string> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, sep)) {
    const auto b = item.find_first_not_of(" \t");
    const auto e = item.find_last_not_of(" \t");
    out.push_back(b == std::string::npos ? "" : item.substr(b, e - b + 1));
  }
  return out;
}

template <typename T>
std::vector<T> parse_numbers(const std::string& text, const std::string& where) {
  std::vector<T> out;
  std::string normalized = text;
  for (char& c : normalized)
    if (c == ',') c = ' ';
  std::istringstream ss(normalized);
  std::string token;
  while (ss >> token) {
    try {
      std::size_t used = 0;
      const long long v = std::stoll(token, &used);
      if (used != token.size()) throw std::invalid_argument(token);
      if constexpr (std::is_unsigned_v<T>)
        if (v < 0) throw std::invalid_argument(token);
      out.push_back(static_cast<T>(v));
    } catch (const std::exception&) {
      throw ConfigError(where + ": '" + token + "' is not an integer");
    }
  }
  return out;
}

inline void reject_unknown(const boost::property_tree::ptree& section, const std::string& name,
                           const std::set<std::string>& allowed) {
  for (const auto& [key, value] : section)
    if (!allowed.count(key)) throw ConfigError("unknown key '" + key + "' in [" + name + "]");
}

}  // namespace detail

inline SkeletonConfig parse_skeleton_config(std::istream& in) {
  namespace pt = boost::property_tree;
  pt::ptree tree;
  try {
    pt::read_ini(in, tree);
  } catch (const pt::ini_parser_error& e) {
    throw ConfigError(std::string("skeleton config: ") + e.what());
  }
  const auto skel = tree.get_child_optional("skeleton");
  if (!skel) throw ConfigError("skeleton config: missing [skeleton] section");
  detail::reject_unknown(*skel, "skeleton", {"parents", "names", "selection"});
  const auto parents = detail::parse_numbers<int>(skel->get<std::string>("parents", ""), "[skeleton] parents");
  std::vector<std::string> names;
  if (const auto n = skel->get_optional<std::string>("names")) names = detail::split_list(*n, ',');

  SkeletonConfig config;
  if (const auto sel = skel->get_optional<std::string>("selection"))
    config.selection = detail::parse_numbers<std::size_t>(*sel, "[skeleton] selection");

  std::vector<Groups> groupings;
  std::vector<std::vector<std::string>> level_names;
  std::size_t levels = 0;
  for (const auto& [name, section] : tree) {
    if (name == "skeleton") continue;
    if (name.rfind("level", 0) != 0) throw ConfigError("unknown section [" + name + "]");
    ++levels;
  }
  for (std::size_t l = 1; l <= levels; ++l) {
    const std::string name = "level" + std::to_string(l);
    const auto section = tree.get_child_optional(name);
    if (!section) throw ConfigError("skeleton config: levels must be numbered level1..level" + std::to_string(levels));
    detail::reject_unknown(*section, name, {"names", "groups"});
    Groups groups;
    for (const std::string& g : detail::split_list(section->get<std::string>("groups", ""), ';'))
      if (!g.empty()) groups.push_back(detail::parse_numbers<std::size_t>(g, "[" + name + "] groups"));
    groupings.push_back(std::move(groups));
    level_names.push_back(section->get_optional<std::string>("names")
                              ? detail::split_list(section->get<std::string>("names"), ',')
                              : std::vector<std::string>{});
  }
  try {
    config.hierarchy = ScaleHierarchy(Skeleton(parents, names), std::move(groupings), std::move(level_names));
  } catch (const ValidationError& e) {
    throw ConfigError(std::string("skeleton config: ") + e.what());
  }
  return config;
}

inline SkeletonConfig load_skeleton_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open skeleton config " + path.string());
  return parse_skeleton_config(in);
}

inline void write_skeleton_config(std::ostream& out, const SkeletonConfig& config) {
  auto join = [](const auto& items) {
    std::ostringstream os;
    for (std::size_t i = 0; i < items.size(); ++i) os << (i ? "," : "") << items[i];
    return os.str();
  };
  const ScaleHierarchy& h = config.hierarchy;
  out << "[skeleton]\n";
  out << "parents = " << join(h.skeleton(0).parents()) << '\n';
  out << "names = " << join(h.skeleton(0).names()) << '\n';
  if (config.selection) out << "selection = " << join(*config.selection) << '\n';
  for (std::size_t step = 0; step + 1 < h.levels(); ++step) {
    out << "\n[level" << step + 1 << "]\n";
    out << "names = " << join(h.skeleton(step + 1).names()) << '\n';
    out << "groups = ";
    const Groups& g = h.grouping(step);
    for (std::size_t r = 0; r < g.size(); ++r) {
      if (r) out << "; ";
      for (std::size_t i = 0; i < g[r].size(); ++i) out << (i ? " " : "") << g[r][i];
    }
    out << '\n';
  }
}

inline SkeletonConfig default_skeleton_config() { return {default_hierarchy(), h36m_joint_selection_22()}; }

/// V x V matrix of 0/1, one row per line.
inline void export_mask_csv(const std::filesystem::path& path, const Mask& mask) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw DataError("cannot write " + path.string());
  for (std::size_t i = 0; i < mask.size; ++i) {
    for (std::size_t j = 0; j < mask.size; ++j) out << (j ? "," : "") << static_cast<int>(mask(i, j));
    out << '\n';
  }
}

/// V_coarse x V_fine pooling matrix with 17 significant digits.
inline void export_pooling_csv(const std::filesystem::path& path, const ScaleHierarchy& h, std::size_t step) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw DataError("cannot write " + path.string());
  const auto p = h.pooling(step);
  const std::size_t fine = h.skeleton(step).size();
  char buf[32];
  for (std::size_t r = 0; r < h.skeleton(step + 1).size(); ++r) {
    for (std::size_t j = 0; j < fine; ++j) {
      std::snprintf(buf, sizeof(buf), "%.17g", p[r * fine + j]);
      out << (j ? "," : "") << buf;
    }
    out << '\n';
  }
}

}  // namespace dmsgcn
