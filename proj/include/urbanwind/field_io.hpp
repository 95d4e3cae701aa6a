// WFLD binary field files.
//
//   offset  size  field
//   0       4     magic "WFLD"
//   4       4     version (u32, currently 1)
//   8       4     channel count (u32)
//   12      4     height (u32)
//   16      4     width (u32)
//   20      4     role tag (u32, FieldRole)
//   24      4*C*H*W  payload: float32, channel-major then row-major
//   ...     8     FNV-1a 64 checksum of the payload bytes (u64)
//
// All integers and floats are little-endian.
#pragma once

#include <algorithm>
#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <iterator>
#include <span>
#include <stdexcept>
#include <type_traits>
#include <string>
#include <vector>

#include "urbanwind/flow_oracle.hpp"
#include "urbanwind/geometry.hpp"

namespace urbanwind {

class FormatError : public std::runtime_error {
 public:
  enum class Kind { Io, BadMagic, BadVersion, BadLength, BadChecksum, BadHeader };
  FormatError(Kind k, const std::string& what) : std::runtime_error(what), kind_(k) {}
  Kind kind() const { return kind_; }

 private:
  Kind kind_;
};

inline const char* to_string(FormatError::Kind k) {
  switch (k) {
    case FormatError::Kind::Io: return "Io";
    case FormatError::Kind::BadMagic: return "BadMagic";
    case FormatError::Kind::BadVersion: return "BadVersion";
    case FormatError::Kind::BadLength: return "BadLength";
    case FormatError::Kind::BadChecksum: return "BadChecksum";
    case FormatError::Kind::BadHeader: return "BadHeader";
  }
  return "Unknown";
}

enum class FieldRole : std::uint32_t {
  InputStack = 0,
  Truth = 1,
  Prediction = 2,
  Variance = 3,
  StdDev = 4,
  Mask = 5,
  Comfort = 6,
};

inline const char* to_string(FieldRole r) {
  switch (r) {
    case FieldRole::InputStack: return "input-stack";
    case FieldRole::Truth: return "truth";
    case FieldRole::Prediction: return "prediction";
    case FieldRole::Variance: return "variance";
    case FieldRole::StdDev: return "stddev";
    case FieldRole::Mask: return "mask";
    case FieldRole::Comfort: return "comfort";
  }
  return "unknown";
}

struct FieldFile {
  FieldRole role = FieldRole::Prediction;
  std::uint32_t channels = 0;
  std::uint32_t height = 0;
  std::uint32_t width = 0;
  std::vector<float> payload;

  friend bool operator==(const FieldFile&, const FieldFile&) = default;
};

inline constexpr std::uint32_t kFieldVersion = 1;
inline constexpr std::size_t kFieldHeaderBytes = 24;

namespace io {

inline std::uint64_t fnv1a64(std::span<const std::uint8_t> bytes, std::uint64_t h = 0xcbf29ce484222325ULL) {
  for (std::uint8_t b : bytes) {
    h ^= b;
    h *= 0x100000001b3ULL;
  }
  return h;
}

template <class U>
void put_le(std::vector<std::uint8_t>& out, U value) {
  static_assert(std::is_trivially_copyable_v<U>);
  std::uint8_t raw[sizeof(U)];
  std::memcpy(raw, &value, sizeof(U));
  if constexpr (std::endian::native == std::endian::big) std::reverse(raw, raw + sizeof(U));
  out.insert(out.end(), raw, raw + sizeof(U));
}

template <class U>
U get_le(std::span<const std::uint8_t> in, std::size_t offset) {
  std::uint8_t raw[sizeof(U)];
  std::memcpy(raw, in.data() + offset, sizeof(U));
  if constexpr (std::endian::native == std::endian::big) std::reverse(raw, raw + sizeof(U));
  U value;
  std::memcpy(&value, raw, sizeof(U));
  return value;
}

inline std::vector<std::uint8_t> read_bytes(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError(FormatError::Kind::Io, "cannot open " + path);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline void write_bytes(const std::string& path, std::span<const std::uint8_t> bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw FormatError(FormatError::Kind::Io, "cannot write " + path);
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw FormatError(FormatError::Kind::Io, "short write to " + path);
}

}  // namespace io

inline std::vector<std::uint8_t> encode_field(const FieldFile& f) {
  const std::size_t expected = static_cast<std::size_t>(f.channels) * f.height * f.width;
  if (f.payload.size() != expected) {
    throw FormatError(FormatError::Kind::BadLength, "payload does not match channels*height*width");
  }
  std::vector<std::uint8_t> out;
  out.reserve(kFieldHeaderBytes + 4 * expected + 8);
  for (char ch : {'W', 'F', 'L', 'D'}) out.push_back(static_cast<std::uint8_t>(ch));
  io::put_le(out, kFieldVersion);
  io::put_le(out, f.channels);
  io::put_le(out, f.height);
  io::put_le(out, f.width);
  io::put_le(out, static_cast<std::uint32_t>(f.role));
  for (float v : f.payload) io::put_le(out, v);
  const auto payload = std::span<const std::uint8_t>(out).subspan(kFieldHeaderBytes);
  io::put_le(out, io::fnv1a64(payload));
  return out;
}

/// Validates in a fixed order: magic, version, header fields, length, checksum.
inline FieldFile decode_field(std::span<const std::uint8_t> bytes) {
  using K = FormatError::Kind;
  if (bytes.size() < 4 || std::memcmp(bytes.data(), "WFLD", 4) != 0) throw FormatError(K::BadMagic, "not a WFLD field file");
  if (bytes.size() < 8) throw FormatError(K::BadLength, "truncated header");
  const auto version = io::get_le<std::uint32_t>(bytes, 4);
  if (version != kFieldVersion) throw FormatError(K::BadVersion, "unsupported field version " + std::to_string(version));
  if (bytes.size() < kFieldHeaderBytes) throw FormatError(K::BadLength, "truncated header");
  FieldFile f;
  f.channels = io::get_le<std::uint32_t>(bytes, 8);
  f.height = io::get_le<std::uint32_t>(bytes, 12);
  f.width = io::get_le<std::uint32_t>(bytes, 16);
  const auto role = io::get_le<std::uint32_t>(bytes, 20);
  if (role > static_cast<std::uint32_t>(FieldRole::Comfort)) throw FormatError(K::BadHeader, "unknown role tag " + std::to_string(role));
  f.role = static_cast<FieldRole>(role);
  const std::uint64_t count = static_cast<std::uint64_t>(f.channels) * f.height * f.width;
  if (bytes.size() != kFieldHeaderBytes + 4 * count + 8) {
    throw FormatError(K::BadLength, "payload length " + std::to_string(bytes.size()) + " bytes, expected " +
                                        std::to_string(kFieldHeaderBytes + 4 * count + 8));
  }
  const auto payload = bytes.subspan(kFieldHeaderBytes, 4 * count);
  if (io::fnv1a64(payload) != io::get_le<std::uint64_t>(bytes, kFieldHeaderBytes + 4 * count)) {
    throw FormatError(K::BadChecksum, "payload checksum mismatch");
  }
  f.payload.resize(count);
  for (std::size_t i = 0; i < count; ++i) f.payload[i] = io::get_le<float>(payload, 4 * i);
  return f;
}

inline void write_field(const std::string& path, const FieldFile& f) { io::write_bytes(path, encode_field(f)); }

inline FieldFile read_field(const std::string& path) {
  const std::vector<std::uint8_t> bytes = io::read_bytes(path);
  return decode_field(bytes);
}

// ---------------------------------------------------------------------------
// Conversions

inline FieldFile to_field_file(const EncodedInput& enc) {
  FieldFile f;
  f.role = FieldRole::InputStack;
  f.channels = kInputChannels;
  f.height = static_cast<std::uint32_t>(enc.rows());
  f.width = static_cast<std::uint32_t>(enc.cols());
  for (const auto& ch : enc.channels) f.payload.insert(f.payload.end(), ch.values().begin(), ch.values().end());
  return f;
}

/// Metadata (slice, direction, pitch) lives in the manifest, not the file.
inline EncodedInput encoded_input_from(const FieldFile& f) {
  if (f.channels != kInputChannels) {
    throw FormatError(FormatError::Kind::BadHeader, "input stack needs 4 channels, file has " + std::to_string(f.channels));
  }
  EncodedInput enc;
  const auto h = static_cast<int>(f.height);
  const auto w = static_cast<int>(f.width);
  const std::size_t plane = static_cast<std::size_t>(h) * w;
  for (int c = 0; c < kInputChannels; ++c) {
    enc.channels[c] = Grid2D<float>(h, w);
    std::copy_n(f.payload.begin() + static_cast<std::ptrdiff_t>(c * plane), plane, enc.channels[c].values().begin());
  }
  return enc;
}

/// Two channels: wind factors, then validity (1 open / 0 solid).
inline FieldFile to_field_file(const WindField& wf, FieldRole role) {
  FieldFile f;
  f.role = role;
  f.channels = 2;
  f.height = static_cast<std::uint32_t>(wf.rows());
  f.width = static_cast<std::uint32_t>(wf.cols());
  f.payload.assign(wf.factors.values().begin(), wf.factors.values().end());
  for (std::uint8_t v : wf.valid.values()) f.payload.push_back(v ? 1.0f : 0.0f);
  return f;
}

/// Accepts two-channel files, or single-channel ones (all cells valid).
inline WindField wind_field_from(const FieldFile& f) {
  if (f.channels != 1 && f.channels != 2) {
    throw FormatError(FormatError::Kind::BadHeader, "wind field needs 1 or 2 channels, file has " + std::to_string(f.channels));
  }
  WindField wf;
  const auto h = static_cast<int>(f.height);
  const auto w = static_cast<int>(f.width);
  const std::size_t plane = static_cast<std::size_t>(h) * w;
  wf.factors = Grid2D<float>(h, w);
  wf.valid = BoolGrid(h, w, 1);
  std::copy_n(f.payload.begin(), plane, wf.factors.values().begin());
  if (f.channels == 2) {
    for (std::size_t i = 0; i < plane; ++i) wf.valid.values()[i] = f.payload[plane + i] != 0.0f ? 1 : 0;
  }
  return wf;
}

template <class T>
FieldFile grid_field(const Grid2D<T>& g, FieldRole role) {
  FieldFile f;
  f.role = role;
  f.channels = 1;
  f.height = static_cast<std::uint32_t>(g.rows());
  f.width = static_cast<std::uint32_t>(g.cols());
  for (const T& v : g.values()) f.payload.push_back(static_cast<float>(v));
  return f;
}

}  // namespace urbanwind
