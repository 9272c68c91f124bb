// SPDX-License-Identifier: Apache-2.0
//
// RPCK checkpoint files.
//
//   "RPCK" | u16 version=1 | u32 tensor count
//   per tensor: u16 name length | UTF-8 name | u8 rank | u32 dims[rank] | u8 dtype (0=f32, 1=f64) | raw LE data
//
// A JSON sidecar (<file>.json) carries the model configuration, seeds and
// training stage.

#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "json.hpp"
#include "radarpos/io.hpp"
#include "radarpos/model.hpp"

namespace radarpos {

inline constexpr char kCheckpointMagic[4] = {'R', 'P', 'C', 'K'};
inline constexpr std::uint16_t kCheckpointVersion = 1;

struct StoredTensor {
  Shape shape;
  Dtype dtype = Dtype::float32;
  std::vector<double> values;  // widened; f32 values round-trip exactly
};

using Checkpoint = std::map<std::string, StoredTensor>;

template <class T>
std::string encode_checkpoint(const ParameterStore<T>& params) {
  io::ByteWriter w;
  w.put_bytes({kCheckpointMagic, 4});
  w.put<std::uint16_t>(kCheckpointVersion);
  w.put<std::uint32_t>(static_cast<std::uint32_t>(params.size()));
  for (const auto& [name, p] : params) {
    if (name.size() > 0xffff) throw FormatError("tensor name too long: " + name);
    w.put<std::uint16_t>(static_cast<std::uint16_t>(name.size()));
    w.put_bytes(name);
    w.put<std::uint8_t>(static_cast<std::uint8_t>(p.value.rank()));
    for (auto d : p.value.shape()) w.put<std::uint32_t>(static_cast<std::uint32_t>(d));
    w.put<std::uint8_t>(static_cast<std::uint8_t>(dtype_of<T>));
    for (T v : p.value.values()) w.put<T>(v);
  }
  return w.bytes();
}

inline Checkpoint decode_checkpoint(std::string_view bytes, const std::string& what = "checkpoint") {
  io::ByteReader r(bytes, what);
  if (r.get_bytes(4) != std::string_view(kCheckpointMagic, 4)) throw FormatError(what + ": bad magic (expected RPCK)");
  if (const auto v = r.get<std::uint16_t>(); v != kCheckpointVersion) {
    throw FormatError(what + ": unsupported version " + std::to_string(v));
  }
  const auto count = r.get<std::uint32_t>();
  Checkpoint out;
  for (std::uint32_t t = 0; t < count; ++t) {
    const auto name_len = r.get<std::uint16_t>();
    std::string name(r.get_bytes(name_len));
    StoredTensor st;
    const auto rank = r.get<std::uint8_t>();
    if (rank == 0) throw FormatError(what + ": tensor '" + name + "' has rank 0");
    for (std::uint8_t k = 0; k < rank; ++k) st.shape.push_back(r.get<std::uint32_t>());
    const auto dtype = r.get<std::uint8_t>();
    if (dtype > 1) throw FormatError(what + ": unknown dtype " + std::to_string(dtype));
    st.dtype = static_cast<Dtype>(dtype);
    const std::size_t n = shape_size(st.shape);
    st.values.resize(n);
    for (auto& v : st.values) v = st.dtype == Dtype::float32 ? static_cast<double>(r.get<float>()) : r.get<double>();
    if (!out.emplace(std::move(name), std::move(st)).second) throw FormatError(what + ": duplicate tensor name");
  }
  if (!r.at_end()) throw FormatError(what + ": trailing bytes after last tensor");
  return out;
}

inline std::filesystem::path checkpoint_sidecar(const std::filesystem::path& path) { return path.string() + ".json"; }

template <class T>
void save_checkpoint(const std::filesystem::path& path, const ParameterStore<T>& params,
                     const nlohmann::json& sidecar) {
  io::write_file_atomic(path, encode_checkpoint(params));
  io::write_file_atomic(checkpoint_sidecar(path), sidecar.dump(2) + "\n");
}

inline Checkpoint read_checkpoint(const std::filesystem::path& path) {
  return decode_checkpoint(io::read_file(path), path.string());
}

inline nlohmann::json read_checkpoint_sidecar(const std::filesystem::path& path) {
  try {
    return nlohmann::json::parse(io::read_file(checkpoint_sidecar(path)));
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(checkpoint_sidecar(path).string() + ": " + e.what());
  }
}

/// Adapter rank stored in a checkpoint, 0 if none.
inline std::size_t checkpoint_adapter_rank(const Checkpoint& ckpt) {
  for (const auto& [name, t] : ckpt) {
    if (name.ends_with(".lora_a")) return t.shape.at(0);
  }
  return 0;
}

/// Copies stored tensors into the model. Every encoder tensor must be present;
/// with `require_all`, every model tensor must be present.
template <class T>
void load_state(RadarPosModel<T>& model, const Checkpoint& ckpt, bool require_all = true) {
  if (const auto rank = checkpoint_adapter_rank(ckpt); rank > 0 && !model.has_adapters()) model.attach_adapters(rank);
  for (auto& [name, p] : model.params()) {
    auto it = ckpt.find(name);
    if (it == ckpt.end()) {
      if (require_all || RadarPosModel<T>::is_encoder_parameter(name)) {
        throw FormatError("checkpoint is missing tensor '" + name + "'");
      }
      continue;
    }
    if (it->second.shape != p.value.shape()) {
      throw FormatError("tensor '" + name + "' has shape " + to_string(it->second.shape) + ", model expects " +
                        to_string(p.value.shape()));
    }
    for (std::size_t i = 0; i < p.value.size(); ++i) p.value[i] = static_cast<T>(it->second.values[i]);
  }
}

}  // namespace radarpos
