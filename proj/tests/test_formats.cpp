#include <gtest/gtest.h>

#include <filesystem>

#include "urbanwind/checkpoint.hpp"
#include "urbanwind/field_io.hpp"

using namespace urbanwind;
namespace fs = std::filesystem;

namespace {

FieldFile random_stack(std::uint64_t seed) {
  nn::Rng rng(seed);
  FieldFile f;
  f.role = FieldRole::InputStack;
  f.channels = 4;
  f.height = 64;
  f.width = 64;
  f.payload.resize(4 * 64 * 64);
  for (float& v : f.payload) v = static_cast<float>(rng.normal());
  return f;
}

FormatError::Kind field_error(std::span<const std::uint8_t> bytes) {
  try {
    decode_field(bytes);
  } catch (const FormatError& e) {
    return e.kind();
  }
  ADD_FAILURE() << "decode accepted corrupt bytes";
  return FormatError::Kind::Io;
}

FormatError::Kind checkpoint_error(std::span<const std::uint8_t> bytes) {
  try {
    decode_checkpoint(bytes);
  } catch (const FormatError& e) {
    return e.kind();
  }
  ADD_FAILURE() << "decode accepted corrupt bytes";
  return FormatError::Kind::Io;
}

ModelCheckpoint small_checkpoint() {
  GeneratorConfig gc;
  gc.base_width = 2;
  Generator<float> g(gc, 5);
  ModelCheckpoint ck;
  ck.metadata = {{"generator", to_json(gc)}, {"normalization", to_json(Normalization{})}, {"epoch", 3}};
  append_tensors(g, ck);
  return ck;
}

}  // namespace

TEST(FieldFormat, FileRoundTripIsBitExact) {
  const FieldFile f = random_stack(1);
  const fs::path path = fs::temp_directory_path() / "urbanwind_formats_stack.wfld";
  write_field(path.string(), f);
  const FieldFile back = read_field(path.string());
  EXPECT_EQ(back, f);
  EXPECT_EQ(io::read_bytes(path.string()), encode_field(f));
  fs::remove(path);
  try {
    read_field(path.string());
    FAIL();
  } catch (const FormatError& e) {
    EXPECT_EQ(e.kind(), FormatError::Kind::Io);
  }
}

TEST(FieldFormat, HeaderLayout) {
  const auto bytes = encode_field(random_stack(2));
  ASSERT_EQ(bytes.size(), kFieldHeaderBytes + 4u * 4 * 64 * 64 + 8);
  EXPECT_EQ(std::string(bytes.begin(), bytes.begin() + 4), "WFLD");
  EXPECT_EQ(io::get_le<std::uint32_t>(bytes, 4), 1u);
  EXPECT_EQ(io::get_le<std::uint32_t>(bytes, 8), 4u);
  EXPECT_EQ(io::get_le<std::uint32_t>(bytes, 12), 64u);
  EXPECT_EQ(io::get_le<std::uint32_t>(bytes, 20), 0u);
  // Little-endian: first payload byte is the low byte of the first float.
  const float first = random_stack(2).payload[0];
  std::uint32_t bits;
  std::memcpy(&bits, &first, 4);
  EXPECT_EQ(bytes[kFieldHeaderBytes], static_cast<std::uint8_t>(bits & 0xff));
}

TEST(FieldFormat, EachCorruptionIsNamed) {
  const auto good = encode_field(random_stack(3));
  auto magic = good;
  magic[0] = 'X';
  EXPECT_EQ(field_error(magic), FormatError::Kind::BadMagic);
  auto version = good;
  version[4] = 9;
  EXPECT_EQ(field_error(version), FormatError::Kind::BadVersion);
  auto flipped = good;
  flipped[kFieldHeaderBytes + 100] ^= 0x01;
  EXPECT_EQ(field_error(flipped), FormatError::Kind::BadChecksum);
  auto checksum = good;
  checksum.back() ^= 0x80;
  EXPECT_EQ(field_error(checksum), FormatError::Kind::BadChecksum);
  const std::vector<std::uint8_t> truncated(good.begin(), good.end() - 100);
  EXPECT_EQ(field_error(truncated), FormatError::Kind::BadLength);
  const std::vector<std::uint8_t> short_header(good.begin(), good.begin() + 10);
  EXPECT_EQ(field_error(short_header), FormatError::Kind::BadLength);
  auto extra = good;
  extra.push_back(0);
  EXPECT_EQ(field_error(extra), FormatError::Kind::BadLength);
  auto role = good;
  role[20] = 42;
  EXPECT_EQ(field_error(role), FormatError::Kind::BadHeader);
}

TEST(FieldFormat, PayloadSizeCheckedOnWrite) {
  FieldFile f = random_stack(4);
  f.payload.pop_back();
  EXPECT_THROW(encode_field(f), FormatError);
}

TEST(FieldFormat, WindFieldAndInputConversions) {
  WindField wf;
  wf.factors = Grid2D<float>(3, 5, 0.7f);
  wf.valid = BoolGrid(3, 5, 1);
  wf.valid(1, 2) = 0;
  wf.factors(1, 2) = 0.0f;
  const WindField back = wind_field_from(decode_field(encode_field(to_field_file(wf, FieldRole::Truth))));
  EXPECT_EQ(back.factors, wf.factors);
  EXPECT_EQ(back.valid, wf.valid);

  EncodedInput enc;
  nn::Rng rng(6);
  for (auto& ch : enc.channels) {
    ch = Grid2D<float>(8, 8);
    for (float& v : ch.values()) v = static_cast<float>(rng.normal());
  }
  const EncodedInput e2 = encoded_input_from(decode_field(encode_field(to_field_file(enc))));
  for (int c = 0; c < kInputChannels; ++c) EXPECT_EQ(e2.channels[c], enc.channels[c]);
  EXPECT_THROW(encoded_input_from(to_field_file(wf, FieldRole::Truth)), FormatError);
  EXPECT_THROW(wind_field_from(to_field_file(enc)), FormatError);
}

TEST(CheckpointFormat, RoundTripIsBitExact) {
  const ModelCheckpoint ck = small_checkpoint();
  const fs::path path = fs::temp_directory_path() / "urbanwind_formats.wckp";
  save_checkpoint(path.string(), ck);
  const ModelCheckpoint back = load_checkpoint(path.string());
  EXPECT_EQ(back.metadata, ck.metadata);
  EXPECT_EQ(back.tensors, ck.tensors);
  EXPECT_EQ(encode_checkpoint(back), encode_checkpoint(ck));
  EXPECT_EQ(checkpoint_id(back), checkpoint_id(ck));
  EXPECT_EQ(checkpoint_id(ck).size(), 16u);
  fs::remove(path);
}

TEST(CheckpointFormat, RestoredGeneratorMatchesOriginal) {
  GeneratorConfig gc;
  gc.base_width = 2;
  Generator<float> g(gc, 5);
  const ModelCheckpoint ck = small_checkpoint();
  Generator<float> loaded = load_generator(decode_checkpoint(encode_checkpoint(ck)));
  nn::Rng rng(1);
  const nn::Tensor<float> x = nn::normal_tensor<float>(nn::Shape{1, 4, 64, 64}, 0.0, 0.2, rng);
  EXPECT_EQ(loaded.forward(x, ForwardMode{}), g.forward(x, ForwardMode{}));
  EXPECT_DOUBLE_EQ(checkpoint_normalization(ck).factor_max, 2.5);
}

TEST(CheckpointFormat, EachCorruptionIsNamed) {
  const auto good = encode_checkpoint(small_checkpoint());
  auto magic = good;
  magic[1] = 'X';
  EXPECT_EQ(checkpoint_error(magic), FormatError::Kind::BadMagic);
  auto version = good;
  version[4] = 7;
  EXPECT_EQ(checkpoint_error(version), FormatError::Kind::BadVersion);
  auto flipped = good;
  flipped[good.size() - 12] ^= 0x10;  // inside the last tensor payload
  EXPECT_EQ(checkpoint_error(flipped), FormatError::Kind::BadChecksum);
  const std::vector<std::uint8_t> truncated(good.begin(), good.end() - 37);
  EXPECT_EQ(checkpoint_error(truncated), FormatError::Kind::BadLength);
  auto extra = good;
  extra.insert(extra.end() - 8, 0);
  EXPECT_EQ(checkpoint_error(extra), FormatError::Kind::BadLength);
}

TEST(CheckpointFormat, HugeTensorDimsRejected) {
  const auto good = encode_checkpoint(small_checkpoint());
  const auto meta_len = io::get_le<std::uint32_t>(good, 8);
  const std::size_t first = 12 + meta_len + 4;
  const auto name_len = io::get_le<std::uint32_t>(good, first);
  const std::size_t dims = first + 4 + name_len;
  auto huge = good;
  for (std::size_t k = 0; k < 16; ++k) huge[dims + k] = 0xFF;
  EXPECT_EQ(checkpoint_error(huge), FormatError::Kind::BadLength);
  auto wrap = good;
  for (std::size_t d = 0; d < 4; ++d) {
    wrap[dims + 4 * d] = 0;
    wrap[dims + 4 * d + 1] = 0;
    wrap[dims + 4 * d + 2] = 1;
    wrap[dims + 4 * d + 3] = 0;
  }
  EXPECT_EQ(checkpoint_error(wrap), FormatError::Kind::BadLength);
  auto zero = good;
  for (std::size_t k = 0; k < 4; ++k) zero[dims + k] = 0;
  EXPECT_EQ(checkpoint_error(zero), FormatError::Kind::BadLength);
}

TEST(CheckpointFormat, MissingOrMisshapenTensorRejected) {
  ModelCheckpoint ck = small_checkpoint();
  ck.tensors.pop_back();
  EXPECT_THROW(load_generator(ck), FormatError);
  ck = small_checkpoint();
  ck.tensors[0].tensor = nn::Tensor<float>(nn::Shape{1, 1, 1, 1});
  EXPECT_THROW(load_generator(ck), FormatError);
  ck = small_checkpoint();
  ck.metadata.erase("generator");
  EXPECT_THROW(load_generator(ck), FormatError);
}

TEST(CheckpointFormat, ConfigJsonRoundTrip) {
  GeneratorConfig gc;
  gc.input_size = 128;
  gc.base_width = 32;
  const GeneratorConfig g2 = generator_config_from(to_json(gc));
  EXPECT_EQ(g2.input_size, 128);
  EXPECT_EQ(g2.base_width, 32);
  DiscriminatorConfig dc;
  dc.receptive_field = ReceptiveField::RF286;
  EXPECT_EQ(discriminator_config_from(to_json(dc)).receptive_field, ReceptiveField::RF286);
  Normalization n;
  n.height_ref = 100.0;
  EXPECT_DOUBLE_EQ(normalization_from(to_json(n)).height_ref, 100.0);
}
