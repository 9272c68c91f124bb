// SPDX-License-Identifier: Apache-2.0
//
// RPDW dataset files.
//
//   "RPDW" | u16 version=1 | u32 record count
//   per record: u8 label | u8 mode | 512 × f64 TOA | 1024 × f32 features (channel-major)
//
// All integers and floats little-endian. A split is stored as
// <stem>.train.rpdw + <stem>.test.rpdw + <stem>.json (seed, ratio, specs).

#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "json.hpp"
#include "radarpos/io.hpp"
#include "radarpos/pdw.hpp"

namespace radarpos::pdw {

inline constexpr char kDatasetMagic[4] = {'R', 'P', 'D', 'W'};
inline constexpr std::uint16_t kDatasetVersion = 1;

inline std::string encode_records(const std::vector<SampleRecord>& records) {
  io::ByteWriter w;
  w.put_bytes({kDatasetMagic, 4});
  w.put<std::uint16_t>(kDatasetVersion);
  w.put<std::uint32_t>(static_cast<std::uint32_t>(records.size()));
  for (const auto& r : records) {
    if (r.toa_track.size() != kSequenceLength || r.features.size() != kChannels * kSequenceLength) {
      throw DimensionError("record does not have the 2x512 layout");
    }
    w.put<std::uint8_t>(r.label);
    w.put<std::uint8_t>(r.mode);
    for (double t : r.toa_track) w.put<double>(t);
    for (float f : r.features) w.put<float>(f);
  }
  return w.bytes();
}

inline std::vector<SampleRecord> decode_records(std::string_view bytes, const std::string& what = "dataset") {
  io::ByteReader r(bytes, what);
  if (r.get_bytes(4) != std::string_view(kDatasetMagic, 4)) throw FormatError(what + ": bad magic (expected RPDW)");
  if (const auto v = r.get<std::uint16_t>(); v != kDatasetVersion) {
    throw FormatError(what + ": unsupported version " + std::to_string(v));
  }
  const auto count = r.get<std::uint32_t>();
  constexpr std::size_t record_bytes = 2 + kSequenceLength * 8 + kChannels * kSequenceLength * 4;
  if (r.remaining() != static_cast<std::size_t>(count) * record_bytes) {
    throw FormatError(what + ": truncated file (record count " + std::to_string(count) + " does not match size)");
  }
  std::vector<SampleRecord> out(count);
  for (auto& rec : out) {
    rec.label = r.get<std::uint8_t>();
    rec.mode = r.get<std::uint8_t>();
    rec.toa_track.resize(kSequenceLength);
    for (auto& t : rec.toa_track) t = r.get<double>();
    rec.features.resize(kChannels * kSequenceLength);
    for (auto& f : rec.features) f = r.get<float>();
  }
  return out;
}

inline void write_records(const std::filesystem::path& path, const std::vector<SampleRecord>& records) {
  io::write_file_atomic(path, encode_records(records));
}

inline std::vector<SampleRecord> read_records(const std::filesystem::path& path) {
  return decode_records(io::read_file(path), path.string());
}

inline nlohmann::json to_json(const ModeSpec& m) {
  static constexpr const char* patterns[] = {"constant", "stagger", "jitter"};
  return {{"mode_id", m.mode_id},
          {"name", mode_name(m.mode_id)},
          {"pattern", patterns[static_cast<int>(m.pattern)]},
          {"pri_base", m.pri_base},
          {"stagger_levels", m.stagger_levels},
          {"jitter", m.jitter}};
}

inline nlohmann::json to_json(const EmitterSpec& e) {
  nlohmann::json modes = nlohmann::json::array();
  for (const auto& m : e.modes) modes.push_back(to_json(m));
  return {{"emitter_id", e.emitter_id},
          {"rf_center", e.rf_center},
          {"rf_agility", e.rf_agility == RfAgility::fixed ? "fixed" : "hop-set"},
          {"rf_hops", e.rf_hops},
          {"rf_dwell", e.rf_dwell},
          {"pw_nominal", e.pw_nominal},
          {"pw_levels", e.pw_levels},
          {"pw_dwell", e.pw_dwell},
          {"modes", modes}};
}

inline nlohmann::json to_json(const NoiseParams& n) {
  return {{"toa_sigma", n.toa_sigma}, {"rf_sigma", n.rf_sigma}, {"pw_sigma", n.pw_sigma}};
}

inline std::filesystem::path train_path(const std::filesystem::path& stem) {
  return stem.string() + ".train.rpdw";
}
inline std::filesystem::path test_path(const std::filesystem::path& stem) { return stem.string() + ".test.rpdw"; }
inline std::filesystem::path sidecar_path(const std::filesystem::path& stem) { return stem.string() + ".json"; }

/// Writes both halves of a split plus its JSON sidecar.
inline void write_dataset(const std::filesystem::path& stem, const DatasetSplit& split,
                          const nlohmann::json& specs = nlohmann::json::object()) {
  write_records(train_path(stem), split.train);
  write_records(test_path(stem), split.test);
  nlohmann::json side{{"seed", split.seed},
                      {"ratio", split.ratio},
                      {"train_size", split.train.size()},
                      {"test_size", split.test.size()},
                      {"train_hash", io::hash_file(train_path(stem))},
                      {"test_hash", io::hash_file(test_path(stem))},
                      {"specs", specs}};
  io::write_file_atomic(sidecar_path(stem), side.dump(2) + "\n");
}

/// Reads a split and verifies the sidecar's file hashes against the files on disk.
inline DatasetSplit read_dataset(const std::filesystem::path& stem) {
  DatasetSplit split;
  const auto side_text = io::read_file(sidecar_path(stem));
  nlohmann::json side;
  try {
    side = nlohmann::json::parse(side_text);
    split.seed = side.at("seed").get<std::uint64_t>();
    split.ratio = side.at("ratio").get<std::vector<std::uint32_t>>();
    if (io::hash_file(train_path(stem)) != side.at("train_hash").get<std::string>() ||
        io::hash_file(test_path(stem)) != side.at("test_hash").get<std::string>()) {
      throw FormatError(stem.string() + ": dataset hash does not match its sidecar");
    }
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(sidecar_path(stem).string() + ": " + e.what());
  }
  split.train = read_records(train_path(stem));
  split.test = read_records(test_path(stem));
  return split;
}

}  // namespace radarpos::pdw
