// WCKP model checkpoints: named float32 tensors plus a JSON metadata record.
//
//   "WCKP" | u32 version | u32 metadata bytes | metadata (UTF-8 JSON)
//   | u32 tensor count | per tensor: u32 name bytes, name, u32 n, c, h, w,
//     float32 payload | u64 FNV-1a checksum of every preceding byte
//
// Little-endian throughout. Errors reuse FormatError kinds.
#pragma once

#include <cstdio>
#include <map>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "urbanwind/cgan.hpp"
#include "urbanwind/field_io.hpp"

namespace urbanwind {

inline constexpr std::uint32_t kCheckpointVersion = 1;

struct NamedTensor {
  std::string name;
  nn::Tensor<float> tensor;
  friend bool operator==(const NamedTensor&, const NamedTensor&) = default;
};

struct ModelCheckpoint {
  nlohmann::json metadata = nlohmann::json::object();
  std::vector<NamedTensor> tensors;

  const NamedTensor* find(const std::string& name) const {
    for (const NamedTensor& t : tensors) {
      if (t.name == name) return &t;
    }
    return nullptr;
  }
};

inline std::vector<std::uint8_t> encode_checkpoint(const ModelCheckpoint& ck) {
  std::vector<std::uint8_t> out{'W', 'C', 'K', 'P'};
  io::put_le(out, kCheckpointVersion);
  const std::string meta = ck.metadata.dump();
  io::put_le(out, static_cast<std::uint32_t>(meta.size()));
  out.insert(out.end(), meta.begin(), meta.end());
  io::put_le(out, static_cast<std::uint32_t>(ck.tensors.size()));
  for (const NamedTensor& t : ck.tensors) {
    io::put_le(out, static_cast<std::uint32_t>(t.name.size()));
    out.insert(out.end(), t.name.begin(), t.name.end());
    const nn::Shape& s = t.tensor.shape();
    for (int d : {s.n, s.c, s.h, s.w}) io::put_le(out, static_cast<std::uint32_t>(d));
    for (float v : t.tensor.values()) io::put_le(out, v);
  }
  io::put_le(out, io::fnv1a64(out));
  return out;
}

inline ModelCheckpoint decode_checkpoint(std::span<const std::uint8_t> bytes) {
  using K = FormatError::Kind;
  if (bytes.size() < 4 || std::memcmp(bytes.data(), "WCKP", 4) != 0) throw FormatError(K::BadMagic, "not a WCKP checkpoint");
  if (bytes.size() < 8) throw FormatError(K::BadLength, "truncated checkpoint header");
  const auto version = io::get_le<std::uint32_t>(bytes, 4);
  if (version != kCheckpointVersion) throw FormatError(K::BadVersion, "unsupported checkpoint version " + std::to_string(version));
  if (bytes.size() < 8 + 8) throw FormatError(K::BadLength, "truncated checkpoint");
  const std::size_t body_end = bytes.size() - 8;
  std::size_t pos = 8;
  auto need = [&](std::size_t n) {
    if (pos + n > body_end) throw FormatError(K::BadLength, "checkpoint truncated at byte " + std::to_string(pos));
  };
  ModelCheckpoint ck;
  need(4);
  const auto meta_len = io::get_le<std::uint32_t>(bytes, pos);
  pos += 4;
  need(meta_len);
  const std::string meta(reinterpret_cast<const char*>(bytes.data() + pos), meta_len);
  pos += meta_len;
  need(4);
  const auto count = io::get_le<std::uint32_t>(bytes, pos);
  pos += 4;
  std::vector<std::pair<std::size_t, nn::Shape>> payloads;
  std::vector<std::string> names;
  for (std::uint32_t i = 0; i < count; ++i) {
    need(4);
    const auto name_len = io::get_le<std::uint32_t>(bytes, pos);
    pos += 4;
    need(name_len);
    names.emplace_back(reinterpret_cast<const char*>(bytes.data() + pos), name_len);
    pos += name_len;
    need(16);
    std::uint64_t dims[4];
    std::uint64_t elems = 1;
    for (int d = 0; d < 4; ++d) {
      dims[d] = io::get_le<std::uint32_t>(bytes, pos + 4 * d);
      if (dims[d] == 0 || dims[d] > (body_end - pos) / 4 || elems > (body_end - pos) / 4 / dims[d]) {
        throw FormatError(K::BadLength, "tensor '" + names.back() + "' does not fit in the checkpoint");
      }
      elems *= dims[d];
    }
    nn::Shape s;
    s.n = static_cast<int>(dims[0]);
    s.c = static_cast<int>(dims[1]);
    s.h = static_cast<int>(dims[2]);
    s.w = static_cast<int>(dims[3]);
    pos += 16;
    need(4 * s.numel());
    payloads.emplace_back(pos, s);
    pos += 4 * s.numel();
  }
  if (pos != body_end) throw FormatError(K::BadLength, "trailing bytes after last tensor");
  if (io::fnv1a64(bytes.first(body_end)) != io::get_le<std::uint64_t>(bytes, body_end)) {
    throw FormatError(K::BadChecksum, "checkpoint checksum mismatch");
  }
  try {
    ck.metadata = nlohmann::json::parse(meta);
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(K::BadHeader, std::string("checkpoint metadata is not valid JSON: ") + e.what());
  }
  for (std::size_t i = 0; i < payloads.size(); ++i) {
    const auto [off, s] = payloads[i];
    nn::Tensor<float> t(s);
    for (std::size_t k = 0; k < t.size(); ++k) t[k] = io::get_le<float>(bytes, off + 4 * k);
    ck.tensors.push_back({names[i], std::move(t)});
  }
  return ck;
}

inline void save_checkpoint(const std::string& path, const ModelCheckpoint& ck) {
  io::write_bytes(path, encode_checkpoint(ck));
}

inline ModelCheckpoint load_checkpoint(const std::string& path) { return decode_checkpoint(io::read_bytes(path)); }

/// Hex checksum of the encoded checkpoint, used as a stable identifier.
inline std::string checkpoint_id(const ModelCheckpoint& ck) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(io::fnv1a64(encode_checkpoint(ck))));
  return buf;
}

// ---------------------------------------------------------------------------
// Model <-> checkpoint

inline nlohmann::json to_json(const GeneratorConfig& g) {
  return {{"input_size", g.input_size}, {"in_channels", g.in_channels}, {"out_channels", g.out_channels},
          {"base_width", g.base_width}, {"dropout_p", g.dropout_p},     {"dropout_blocks", g.dropout_blocks}};
}

inline GeneratorConfig generator_config_from(const nlohmann::json& j) {
  GeneratorConfig g;
  g.input_size = j.at("input_size").get<int>();
  g.in_channels = j.at("in_channels").get<int>();
  g.out_channels = j.at("out_channels").get<int>();
  g.base_width = j.at("base_width").get<int>();
  g.dropout_p = j.at("dropout_p").get<double>();
  g.dropout_blocks = j.at("dropout_blocks").get<int>();
  return g;
}

inline nlohmann::json to_json(const DiscriminatorConfig& d) {
  return {{"receptive_field", static_cast<int>(d.receptive_field)}, {"in_channels", d.in_channels}, {"base_width", d.base_width}};
}

inline DiscriminatorConfig discriminator_config_from(const nlohmann::json& j) {
  DiscriminatorConfig d;
  d.receptive_field = parse_receptive_field(j.at("receptive_field").get<int>());
  d.in_channels = j.at("in_channels").get<int>();
  d.base_width = j.at("base_width").get<int>();
  return d;
}

inline nlohmann::json to_json(const Normalization& n) {
  return {{"height_ref", n.height_ref}, {"factor_max", n.factor_max}};
}

inline Normalization normalization_from(const nlohmann::json& j) {
  return {j.at("height_ref").get<double>(), j.at("factor_max").get<double>()};
}

template <class Model>
void append_tensors(Model& model, ModelCheckpoint& ck) {
  for (nn::Param<float>* p : model.parameters()) ck.tensors.push_back({p->name, p->value});
  for (const nn::Buffer<float>& b : model.buffers()) ck.tensors.push_back({b.name, *b.value});
}

/// Copies tensors into `model`; every parameter and buffer must be present
/// with a matching shape.
template <class Model>
void restore_tensors(Model& model, const ModelCheckpoint& ck) {
  auto copy_into = [&](const std::string& name, nn::Tensor<float>& dst) {
    const NamedTensor* t = ck.find(name);
    if (t == nullptr) throw FormatError(FormatError::Kind::BadHeader, "checkpoint lacks tensor " + name);
    if (!(t->tensor.shape() == dst.shape())) {
      throw FormatError(FormatError::Kind::BadHeader, "tensor " + name + " has shape " + t->tensor.shape().str() +
                                                          ", model expects " + dst.shape().str());
    }
    dst = t->tensor;
  };
  for (nn::Param<float>* p : model.parameters()) copy_into(p->name, p->value);
  for (nn::Buffer<float>& b : model.buffers()) copy_into(b.name, *b.value);
}

/// Rebuilds the generator described by the checkpoint metadata.
inline Generator<float> load_generator(const ModelCheckpoint& ck) {
  try {
    Generator<float> g(generator_config_from(ck.metadata.at("generator")), 0);
    restore_tensors(g, ck);
    return g;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(FormatError::Kind::BadHeader, std::string("checkpoint metadata: ") + e.what());
  }
}

inline Normalization checkpoint_normalization(const ModelCheckpoint& ck) {
  try {
    return normalization_from(ck.metadata.at("normalization"));
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(FormatError::Kind::BadHeader, std::string("checkpoint metadata: ") + e.what());
  }
}

}  // namespace urbanwind
