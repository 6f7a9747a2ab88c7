#pragma once

// On-disk dataset: <dir>/manifest.json + <dir>/payload.bin.
//
// payload.bin holds, for each split in order train, val, test_id, test_ood:
//   images   count * image_size^2 little-endian f64
//   records  per sample: labels[C] u8, markers[C] u8, sex u8, age_group u8,
//            align_eligible u8, then per class: present u8 followed by
//            image_size^2 mask bytes when present
// The manifest records each section's byte offset and length and the CRC-32
// of the whole payload.

#include <array>
#include <filesystem>
#include <optional>
#include <string>

#include <json.hpp>

#include "egl/bytes.hpp"
#include "egl/config_io.hpp"
#include "egl/errors.hpp"
#include "egl/synthdata.hpp"

namespace egl {

inline constexpr int kDatasetVersion = 1;

inline const std::array<const char*, 4>& split_names() {
  static const std::array<const char*, 4> names = {"train", "val", "test_id", "test_ood"};
  return names;
}

namespace detail {

inline std::array<const SampleSet*, 4> splits_of(const Dataset& d) {
  return {&d.train, &d.val, &d.test_id, &d.test_ood};
}
inline std::array<SampleSet*, 4> splits_of(Dataset& d) { return {&d.train, &d.val, &d.test_id, &d.test_ood}; }

// Image size and class count shared by every sample; empty datasets default to 0.
inline std::pair<std::size_t, std::size_t> dataset_shape(const Dataset& d) {
  std::optional<std::pair<std::size_t, std::size_t>> shape;
  for (const SampleSet* s : splits_of(d)) {
    for (const Sample& smp : *s) {
      const std::pair<std::size_t, std::size_t> here{smp.image.rows(), smp.labels.size()};
      if (smp.image.rows() != smp.image.cols()) throw DimensionError("write_dataset: images must be square");
      if (smp.markers.size() != here.second || smp.masks.size() != here.second) {
        throw DimensionError("write_dataset: per-class vectors disagree in length");
      }
      if (!shape) shape = here;
      if (*shape != here) throw DimensionError("write_dataset: samples differ in image size or class count");
    }
  }
  return shape.value_or(std::pair<std::size_t, std::size_t>{0, 0});
}

}  // namespace detail

inline void write_dataset(const Dataset& data, const std::filesystem::path& dir,
                          const std::optional<GeneratorConfig>& echo = std::nullopt) {
  const auto [size, classes] = detail::dataset_shape(data);
  const std::size_t pixels = size * size;
  bytes::Buffer payload;
  Json splits = Json::object();
  const auto sets = detail::splits_of(data);
  for (std::size_t k = 0; k < sets.size(); ++k) {
    const SampleSet& set = *sets[k];
    const std::size_t img_off = payload.size();
    for (const Sample& s : set) {
      for (double v : s.image.values()) bytes::put_f64(payload, v);
    }
    const std::size_t rec_off = payload.size();
    for (const Sample& s : set) {
      payload.insert(payload.end(), s.labels.begin(), s.labels.end());
      payload.insert(payload.end(), s.markers.begin(), s.markers.end());
      payload.push_back(static_cast<std::uint8_t>(s.demographics.sex));
      payload.push_back(static_cast<std::uint8_t>(s.demographics.age_group));
      payload.push_back(s.align_eligible ? 1 : 0);
      for (std::size_t c = 0; c < classes; ++c) {
        payload.push_back(s.masks[c] ? 1 : 0);
        if (!s.masks[c]) continue;
        if (s.masks[c]->mask.size() != pixels) throw DimensionError("write_dataset: mask shape differs from image");
        for (double v : s.masks[c]->mask.values()) payload.push_back(v != 0.0 ? 1 : 0);
      }
    }
    splits[split_names()[k]] = {{"count", set.size()},
                                {"images_offset", img_off},
                                {"images_length", rec_off - img_off},
                                {"records_offset", rec_off},
                                {"records_length", payload.size() - rec_off}};
  }
  Json names = Json::array();
  for (std::size_t c = 0; c < classes; ++c) {
    names.push_back(c < default_class_names().size() ? default_class_names()[c] : "class_" + std::to_string(c));
  }
  Json manifest = {{"format", "egl-dataset"},
                   {"version", kDatasetVersion},
                   {"image_size", size},
                   {"classes", classes},
                   {"class_names", names},
                   {"demographic_schema", {{"sex", {"female", "male"}}, {"age_group", {"young", "old"}}}},
                   {"generator_config", echo ? to_json(*echo) : Json(nullptr)},
                   {"splits", splits},
                   {"payload_bytes", payload.size()},
                   {"crc32", bytes::crc32(payload)}};
  std::filesystem::create_directories(dir);
  bytes::write_file(dir / "payload.bin", payload);
  bytes::write_text(dir / "manifest.json", manifest.dump(2) + "\n");
}

struct LoadedDataset {
  Dataset data;
  std::optional<GeneratorConfig> generator;
};

inline LoadedDataset read_dataset_with_manifest(const std::filesystem::path& dir) {
  Json manifest;
  {
    const bytes::Buffer text = bytes::read_file(dir / "manifest.json");
    try {
      manifest = Json::parse(text.begin(), text.end());
    } catch (const nlohmann::json::exception& e) {
      throw FormatError(std::string("manifest.json is malformed: ") + e.what(), 0);
    }
  }
  const bytes::Buffer payload = bytes::read_file(dir / "payload.bin");

  try {
    if (manifest.at("format") != "egl-dataset") throw FormatError("manifest.json: wrong format tag", 0);
    const int version = manifest.at("version").get<int>();
    if (version != kDatasetVersion) throw UnsupportedVersionError(version, 0);
    const auto expected = manifest.at("payload_bytes").get<std::size_t>();
    if (payload.size() != expected) {
      throw FormatError("payload.bin is " + std::to_string(payload.size()) + " bytes, manifest declares " +
                            std::to_string(expected),
                        std::min(payload.size(), expected));
    }
    if (bytes::crc32(payload) != manifest.at("crc32").get<std::uint32_t>()) {
      throw FormatError("payload.bin checksum mismatch", 0);
    }
    const auto size = manifest.at("image_size").get<std::size_t>();
    const auto classes = manifest.at("classes").get<std::size_t>();
    const std::size_t pixels = size * size;

    LoadedDataset out;
    if (!manifest.at("generator_config").is_null()) {
      out.generator = generator_config_from_json(manifest.at("generator_config"));
    }
    auto sets = detail::splits_of(out.data);
    for (std::size_t k = 0; k < sets.size(); ++k) {
      const Json& sj = manifest.at("splits").at(split_names()[k]);
      const auto count = sj.at("count").get<std::size_t>();
      const auto img_off = sj.at("images_offset").get<std::size_t>();
      const auto img_len = sj.at("images_length").get<std::size_t>();
      const auto rec_off = sj.at("records_offset").get<std::size_t>();
      const auto rec_len = sj.at("records_length").get<std::size_t>();
      if (img_off > payload.size() || img_len > payload.size() - img_off || rec_off > payload.size() ||
          rec_len > payload.size() - rec_off) {
        throw FormatError(std::string("split '") + split_names()[k] + "' extends past payload", payload.size());
      }
      if (img_len != count * pixels * 8) {
        throw FormatError(std::string("split '") + split_names()[k] + "' image section has wrong length", img_off);
      }
      bytes::Reader images(payload, img_off, img_off + img_len);
      bytes::Reader records(payload, rec_off, rec_off + rec_len);
      SampleSet& set = *sets[k];
      set.resize(count);
      for (Sample& s : set) {
        s.image = Grid(size, size);
        for (double& v : s.image.values()) v = images.f64("image");
        auto flag = [&](const char* what) {
          const std::size_t at = records.offset();
          const std::uint8_t b = records.u8(what);
          if (b > 1) throw FormatError(std::string("invalid ") + what + " byte", at);
          return b;
        };
        s.labels.resize(classes);
        s.markers.resize(classes);
        for (auto& l : s.labels) l = flag("label");
        for (auto& m : s.markers) m = flag("marker");
        s.demographics.sex = static_cast<Sex>(flag("sex"));
        s.demographics.age_group = static_cast<AgeGroup>(flag("age_group"));
        s.align_eligible = flag("align_eligible") != 0;
        s.masks.assign(classes, std::nullopt);
        for (std::size_t c = 0; c < classes; ++c) {
          const std::size_t at = records.offset();
          if (!flag("mask presence")) continue;
          if (!s.labels[c]) throw FormatError("mask present for a negative label", at);
          Grid m(size, size);
          for (double& v : m.values()) v = flag("mask");
          s.masks[c] = AttentionTarget{std::move(m)};
        }
      }
      if (!records.done()) throw FormatError("trailing bytes in record section", records.offset());
    }
    return out;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("manifest.json is malformed: ") + e.what(), 0);
  } catch (const ConfigError& e) {
    throw FormatError(std::string("manifest.json generator_config: ") + e.what(), 0);
  }
}

inline Dataset read_dataset(const std::filesystem::path& dir) { return read_dataset_with_manifest(dir).data; }

}  // namespace egl
