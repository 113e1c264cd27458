#pragma once

#include <zlib.h>

#include <bit>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "json.hpp"

#include "dmsgcn/model.hpp"

// Checkpoint directory layout (format version 1):
//
//   <dir>/manifest.json    format tag, version, config snapshot, config CRC-32,
//                          and per parameter: name, shape, file, byte count, CRC-32
//   <dir>/<name>.f32       row-major values as little-endian IEEE-754 binary32
//
// CRC-32 is the zlib/PNG polynomial, written as 8 lowercase hex digits. The
// config CRC covers manifest["config"].dump() (compact, keys sorted).

namespace dmsgcn {

inline constexpr int kCheckpointVersion = 1;
inline constexpr const char* kCheckpointFormat = "dmsgcn-checkpoint";

class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};
class CheckpointVersionError : public CheckpointError {
 public:
  using CheckpointError::CheckpointError;
};
class ChecksumError : public CheckpointError {
 public:
  using CheckpointError::CheckpointError;
};
class TruncatedError : public CheckpointError {
 public:
  using CheckpointError::CheckpointError;
};
class ConfigMismatchError : public CheckpointError {
 public:
  using CheckpointError::CheckpointError;
};

inline std::string crc32_hex(const void* bytes, std::size_t size) {
  uLong crc = crc32(0L, Z_NULL, 0);
  crc = crc32(crc, static_cast<const Bytef*>(bytes), static_cast<uInt>(size));
  std::ostringstream os;
  os << std::hex << std::setw(8) << std::setfill('0') << static_cast<std::uint32_t>(crc);
  return os.str();
}

inline std::string config_checksum(const ModelConfig& config) {
  const std::string text = to_json(config).dump();
  return crc32_hex(text.data(), text.size());
}

namespace detail {

template <typename S>
std::vector<unsigned char> encode_f32_le(std::span<const S> values) {
  std::vector<unsigned char> bytes(values.size() * 4);
  for (std::size_t i = 0; i < values.size(); ++i) {
    const auto bits = std::bit_cast<std::uint32_t>(static_cast<float>(values[i]));
    for (int b = 0; b < 4; ++b) bytes[i * 4 + b] = static_cast<unsigned char>(bits >> (8 * b));
  }
  return bytes;
}

inline std::vector<unsigned char> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError("cannot open " + path.string());
  return std::vector<unsigned char>(std::istreambuf_iterator<char>(in), {});
}

inline std::string file_name_for(const std::string& param) { return param + ".f32"; }

}  // namespace detail

/// Writes a checkpoint directory. Values are stored as fp32 regardless of S.
template <typename S>
void save_checkpoint(const DMSGCNModel<S>& model, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  nlohmann::json manifest;
  manifest["format"] = kCheckpointFormat;
  manifest["format_version"] = kCheckpointVersion;
  manifest["config"] = to_json(model.config());
  manifest["config_crc32"] = config_checksum(model.config());
  nlohmann::json entries = nlohmann::json::array();
  for (const auto& p : model.parameters()) {
    const auto bytes = detail::encode_f32_le<S>(p->value.data());
    const std::string file = detail::file_name_for(p->name);
    std::ofstream out(dir / file, std::ios::binary | std::ios::trunc);
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw CheckpointError("failed writing " + (dir / file).string());
    entries.push_back({{"name", p->name},
                       {"shape", p->value.shape()},
                       {"file", file},
                       {"bytes", bytes.size()},
                       {"crc32", crc32_hex(bytes.data(), bytes.size())}});
  }
  manifest["parameters"] = entries;
  const auto tmp = dir / "manifest.json.tmp";
  {
    std::ofstream out(tmp, std::ios::trunc);
    out << manifest.dump(2) << '\n';
    if (!out) throw CheckpointError("failed writing manifest in " + dir.string());
  }
  std::filesystem::rename(tmp, dir / "manifest.json");
}

inline nlohmann::json read_manifest(const std::filesystem::path& dir) {
  const auto path = dir / "manifest.json";
  if (!std::filesystem::exists(path)) throw CheckpointError("no manifest.json in " + dir.string());
  nlohmann::json manifest;
  try {
    std::ifstream in(path);
    manifest = nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw ChecksumError("manifest " + path.string() + " is corrupt: " + e.what());
  }
  if (manifest.value("format", "") != kCheckpointFormat) throw CheckpointError(path.string() + " is not a checkpoint manifest");
  const int version = manifest.value("format_version", -1);
  if (version != kCheckpointVersion)
    throw CheckpointVersionError("checkpoint format version " + std::to_string(version) + " is not supported (expected " +
                                 std::to_string(kCheckpointVersion) + ")");
  const std::string text = manifest.at("config").dump();
  if (crc32_hex(text.data(), text.size()) != manifest.at("config_crc32").get<std::string>())
    throw ChecksumError("config snapshot in " + path.string() + " fails its checksum");
  return manifest;
}

/// Loads parameter values into an existing model whose config must match the snapshot.
template <typename S>
void load_into(DMSGCNModel<S>& model, const std::filesystem::path& dir) {
  const nlohmann::json manifest = read_manifest(dir);
  if (manifest.at("config_crc32").get<std::string>() != config_checksum(model.config()))
    throw ConfigMismatchError("checkpoint " + dir.string() + " was written for a different model configuration");
  const auto& entries = manifest.at("parameters");
  if (entries.size() != model.parameters().size())
    throw ConfigMismatchError("checkpoint holds " + std::to_string(entries.size()) + " parameters, model has " +
                              std::to_string(model.parameters().size()));
  for (const auto& p : model.parameters()) {
    const auto it = std::find_if(entries.begin(), entries.end(), [&](const auto& e) { return e.at("name") == p->name; });
    if (it == entries.end()) throw ConfigMismatchError("checkpoint lacks parameter '" + p->name + "'");
    if (it->at("shape").template get<Shape>() != p->value.shape())
      throw ConfigMismatchError("shape mismatch for '" + p->name + "'");
    const auto bytes = detail::read_file(dir / it->at("file").template get<std::string>());
    const std::size_t expected = p->value.numel() * 4;
    if (bytes.size() < expected)
      throw TruncatedError("parameter file for '" + p->name + "' has " + std::to_string(bytes.size()) + " bytes, expected " +
                           std::to_string(expected));
    if (bytes.size() != expected || crc32_hex(bytes.data(), bytes.size()) != it->at("crc32").template get<std::string>())
      throw ChecksumError("parameter file for '" + p->name + "' fails its checksum");
    auto values = p->value.data();
    for (std::size_t i = 0; i < values.size(); ++i) {
      std::uint32_t bits = 0;
      for (int b = 0; b < 4; ++b) bits |= static_cast<std::uint32_t>(bytes[i * 4 + b]) << (8 * b);
      values[i] = static_cast<S>(std::bit_cast<float>(bits));
    }
  }
}

/// Rebuilds the model from the checkpoint's own config snapshot.
template <typename S>
DMSGCNModel<S> load_checkpoint(const std::filesystem::path& dir) {
  DMSGCNModel<S> model(model_config_from_json(read_manifest(dir).at("config")));
  load_into(model, dir);
  return model;
}

/// As load_checkpoint, but fails unless the snapshot equals `expected`.
template <typename S>
DMSGCNModel<S> load_checkpoint(const std::filesystem::path& dir, const ModelConfig& expected) {
  DMSGCNModel<S> model(expected);
  load_into(model, dir);
  return model;
}

}  // namespace dmsgcn
