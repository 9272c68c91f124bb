// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <bit>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <sstream>
#include <string>
#include <string_view>
#include <type_traits>
#include <vector>

#include "radarpos/errors.hpp"

namespace radarpos::io {

static_assert(std::endian::native == std::endian::little || std::endian::native == std::endian::big);

/// Appends little-endian scalars to a byte buffer.
class ByteWriter {
 public:
  template <class U>
  void put(U v) {
    static_assert(std::is_arithmetic_v<U>);
    using Bits = std::conditional_t<sizeof(U) == 1, std::uint8_t,
                                    std::conditional_t<sizeof(U) == 2, std::uint16_t,
                                                       std::conditional_t<sizeof(U) == 4, std::uint32_t, std::uint64_t>>>;
    auto bits = std::bit_cast<Bits>(v);
    for (std::size_t i = 0; i < sizeof(U); ++i) bytes_.push_back(static_cast<char>((bits >> (8 * i)) & 0xffu));
  }

  void put_bytes(std::string_view s) { bytes_.append(s); }

  const std::string& bytes() const noexcept { return bytes_; }

 private:
  std::string bytes_;
};

/// Reads little-endian scalars; running past the end is a FormatError.
class ByteReader {
 public:
  ByteReader(std::string_view bytes, std::string what) : bytes_(bytes), what_(std::move(what)) {}

  template <class U>
  U get() {
    static_assert(std::is_arithmetic_v<U>);
    using Bits = std::conditional_t<sizeof(U) == 1, std::uint8_t,
                                    std::conditional_t<sizeof(U) == 2, std::uint16_t,
                                                       std::conditional_t<sizeof(U) == 4, std::uint32_t, std::uint64_t>>>;
    require(sizeof(U));
    Bits bits = 0;
    for (std::size_t i = 0; i < sizeof(U); ++i) {
      bits |= static_cast<Bits>(static_cast<Bits>(static_cast<unsigned char>(bytes_[pos_ + i])) << (8 * i));
    }
    pos_ += sizeof(U);
    return std::bit_cast<U>(bits);
  }

  std::string_view get_bytes(std::size_t n) {
    require(n);
    auto out = bytes_.substr(pos_, n);
    pos_ += n;
    return out;
  }

  bool at_end() const noexcept { return pos_ == bytes_.size(); }
  std::size_t remaining() const noexcept { return bytes_.size() - pos_; }

 private:
  void require(std::size_t n) const {
    if (bytes_.size() - pos_ < n) throw FormatError(what_ + ": truncated file");
  }

  std::string_view bytes_;
  std::string what_;
  std::size_t pos_ = 0;
};

inline std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

/// Writes to a sibling temp file, then renames over the destination.
inline void write_file_atomic(const std::filesystem::path& path, std::string_view bytes) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw ConfigError("cannot write " + tmp.string());
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw ConfigError("short write to " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

/// FNV-1a 64-bit content hash, hex encoded.
inline std::string hash_bytes(std::string_view bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (char c : bytes) {
    h ^= static_cast<unsigned char>(c);
    h *= 0x100000001b3ULL;
  }
  std::ostringstream os;
  os << std::hex << std::setw(16) << std::setfill('0') << h;
  return os.str();
}

inline std::string hash_file(const std::filesystem::path& path) { return hash_bytes(read_file(path)); }

}  // namespace radarpos::io
