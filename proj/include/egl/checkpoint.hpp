#pragma once

// Model checkpoint file:
//
//   u64 LE   header length H
//   H bytes  JSON header {format, version, model_config, fields[{name, rows, cols, offset, length}]}
//   payload  little-endian f64 values; field offsets/lengths count values, not bytes

#include <filesystem>
#include <string>

#include <json.hpp>

#include "egl/bytes.hpp"
#include "egl/config_io.hpp"
#include "egl/errors.hpp"
#include "egl/model.hpp"

namespace egl {

inline constexpr int kCheckpointVersion = 1;

struct Checkpoint {
  ModelConfig config;
  ModelParams params;
};

inline bytes::Buffer encode_checkpoint(const ModelConfig& cfg, const ModelParams& params) {
  if (!params.matches(cfg)) throw DimensionError("checkpoint: parameters do not match the model config");
  Json fields = Json::array();
  std::size_t offset = 0;
  params.for_each_field([&](const char* name, const Grid& g) {
    fields.push_back({{"name", name}, {"rows", g.rows()}, {"cols", g.cols()}, {"offset", offset}, {"length", g.size()}});
    offset += g.size();
  });
  const Json header = {{"format", "egl-checkpoint"},
                       {"version", kCheckpointVersion},
                       {"model_config", to_json(cfg)},
                       {"fields", fields},
                       {"payload_values", offset}};
  const std::string text = header.dump();
  bytes::Buffer out;
  out.reserve(8 + text.size() + 8 * offset);
  bytes::put_u64(out, text.size());
  out.insert(out.end(), text.begin(), text.end());
  params.for_each_field([&](const char*, const Grid& g) {
    for (double v : g.values()) bytes::put_f64(out, v);
  });
  return out;
}

inline Checkpoint decode_checkpoint(const bytes::Buffer& buf) {
  if (buf.size() < 8) throw FormatError("checkpoint: missing header length", buf.size());
  const std::uint64_t hlen = bytes::get_u64(buf.data());
  if (hlen > buf.size() - 8) throw FormatError("checkpoint: header extends past end of file", 8);
  Json header;
  try {
    header = Json::parse(buf.begin() + 8, buf.begin() + 8 + static_cast<std::ptrdiff_t>(hlen));
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("checkpoint: malformed header: ") + e.what(), 8);
  }
  try {
    if (header.at("format") != "egl-checkpoint") throw FormatError("checkpoint: wrong format tag", 8);
    const int version = header.at("version").get<int>();
    if (version != kCheckpointVersion) throw UnsupportedVersionError(version, 8);
    Checkpoint ck;
    ck.config = model_config_from_json(header.at("model_config"));
    ck.params = ModelParams::zeros(ck.config);
    const std::size_t base = 8 + hlen;
    const std::size_t values = header.at("payload_values").get<std::size_t>();
    if (values != ck.params.count()) throw FormatError("checkpoint: payload size disagrees with model config", 8);
    if (buf.size() - base != 8 * values) {
      throw FormatError("checkpoint: payload is " + std::to_string(buf.size() - base) + " bytes, expected " +
                            std::to_string(8 * values),
                        buf.size());
    }
    const Json& fields = header.at("fields");
    std::size_t idx = 0;
    ck.params.for_each_field([&](const char* name, Grid& g) {
      const Json& f = fields.at(idx++);
      if (f.at("name") != name || f.at("rows").get<std::size_t>() != g.rows() ||
          f.at("cols").get<std::size_t>() != g.cols() || f.at("length").get<std::size_t>() != g.size()) {
        throw FormatError(std::string("checkpoint: field '") + name + "' does not match the model config", 8);
      }
      const std::size_t off = f.at("offset").get<std::size_t>();
      if (off + g.size() > values) throw FormatError("checkpoint: field extends past payload", base + 8 * off);
      for (std::size_t i = 0; i < g.size(); ++i) g[i] = bytes::get_f64(buf.data() + base + 8 * (off + i));
    });
    return ck;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("checkpoint: malformed header: ") + e.what(), 8);
  } catch (const ConfigError& e) {
    throw FormatError(std::string("checkpoint: ") + e.what(), 8);
  }
}

inline void write_checkpoint(const std::filesystem::path& path, const ModelConfig& cfg, const ModelParams& params) {
  bytes::write_file(path, encode_checkpoint(cfg, params));
}

inline Checkpoint read_checkpoint(const std::filesystem::path& path) {
  return decode_checkpoint(bytes::read_file(path));
}

}  // namespace egl
