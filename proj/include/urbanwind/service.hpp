// Inference requests and responses shared by the CLI and the HTTP service.
//
// Grids travel as base64 text of complete WFLD files.
#pragma once

#include <chrono>
#include <cmath>
#include <cstdint>
#include <memory>
#include <optional>
#include <random>
#include <set>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "urbanwind/checkpoint.hpp"
#include "urbanwind/dataset.hpp"
#include "urbanwind/mc_dropout.hpp"
#include "urbanwind/metrics.hpp"
#include "urbanwind/scene_io.hpp"
#include "urbanwind/training.hpp"

namespace urbanwind {

namespace base64 {

inline constexpr char kAlphabet[] = "ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz0123456789+/";

inline std::string encode(std::span<const std::uint8_t> in) {
  std::string out;
  out.reserve((in.size() + 2) / 3 * 4);
  std::size_t i = 0;
  for (; i + 2 < in.size(); i += 3) {
    const std::uint32_t v = (in[i] << 16) | (in[i + 1] << 8) | in[i + 2];
    for (int s : {18, 12, 6, 0}) out.push_back(kAlphabet[(v >> s) & 63]);
  }
  if (i < in.size()) {
    std::uint32_t v = in[i] << 16;
    if (i + 1 < in.size()) v |= in[i + 1] << 8;
    out.push_back(kAlphabet[(v >> 18) & 63]);
    out.push_back(kAlphabet[(v >> 12) & 63]);
    out.push_back(i + 1 < in.size() ? kAlphabet[(v >> 6) & 63] : '=');
    out.push_back('=');
  }
  return out;
}

inline std::vector<std::uint8_t> decode(const std::string& in) {
  auto value = [](char c) -> int {
    if (c >= 'A' && c <= 'Z') return c - 'A';
    if (c >= 'a' && c <= 'z') return c - 'a' + 26;
    if (c >= '0' && c <= '9') return c - '0' + 52;
    if (c == '+') return 62;
    if (c == '/') return 63;
    return -1;
  };
  if (in.size() % 4 != 0) throw std::invalid_argument("base64 length is not a multiple of 4");
  std::vector<std::uint8_t> out;
  out.reserve(in.size() / 4 * 3);
  for (std::size_t i = 0; i < in.size(); i += 4) {
    std::uint32_t v = 0;
    int pad = 0;
    for (std::size_t k = 0; k < 4; ++k) {
      const char c = in[i + k];
      if (c == '=' && i + 4 == in.size() && k >= 2) {
        ++pad;
        v <<= 6;
        continue;
      }
      const int d = value(c);
      if (d < 0 || pad > 0) throw std::invalid_argument("invalid base64 character");
      v = (v << 6) | static_cast<std::uint32_t>(d);
    }
    out.push_back(static_cast<std::uint8_t>(v >> 16));
    if (pad < 2) out.push_back(static_cast<std::uint8_t>(v >> 8));
    if (pad < 1) out.push_back(static_cast<std::uint8_t>(v));
  }
  return out;
}

}  // namespace base64

inline std::string field_to_base64(const FieldFile& f) { return base64::encode(encode_field(f)); }

inline FieldFile field_from_base64(const std::string& s) { return decode_field(base64::decode(s)); }

// ---------------------------------------------------------------------------
// Requests

/// Rejected request. status 400: malformed; 422: out of range.
class RequestError : public std::runtime_error {
 public:
  RequestError(int status, std::string field, const std::string& message)
      : std::runtime_error(message), status_(status), field_(std::move(field)) {}
  int status() const { return status_; }
  const std::string& field() const { return field_; }

 private:
  int status_;
  std::string field_;
};

struct InferenceRequest {
  std::optional<UrbanScene> scene;
  Direction direction = Direction::W;
  double slice_height = 1.5;
  double inlet_speed = 5.0;
  std::optional<EncodedInput> input;  // pre-encoded alternative to `scene`
  int mc_samples = 30;
  double dropout_p = 0.5;
  std::optional<std::uint64_t> seed;
  ComfortSpec comfort;
};

inline constexpr int kMaxMcSamples = 1000;

namespace detail {

template <class T>
T typed_field(const nlohmann::json& j, const char* key, const char* type_name) {
  try {
    return j.at(key).get<T>();
  } catch (const nlohmann::json::exception&) {
    throw RequestError(400, key, std::string("'") + key + "' must be " + type_name);
  }
}

}  // namespace detail

inline void validate(const InferenceRequest& r) {
  if (r.scene.has_value() == r.input.has_value()) {
    throw RequestError(400, "scene", "exactly one of 'scene' or 'input' is required");
  }
  if (r.mc_samples < 1 || r.mc_samples > kMaxMcSamples) {
    throw RequestError(422, "mc_samples", "mc_samples must be in [1, " + std::to_string(kMaxMcSamples) + "]");
  }
  if (!(r.dropout_p >= 0.0 && r.dropout_p < 1.0)) throw RequestError(422, "dropout_p", "dropout_p must be in [0, 1)");
  if (!(r.inlet_speed > 0.0 && r.inlet_speed <= 100.0)) {
    throw RequestError(422, "inlet_speed", "inlet_speed must be in (0, 100] m/s");
  }
  if (!(r.slice_height > 0.0 && r.slice_height <= 500.0)) {
    throw RequestError(422, "slice_height", "slice_height must be in (0, 500] m");
  }
}

inline InferenceRequest parse_request(const nlohmann::json& j) {
  if (!j.is_object()) throw RequestError(400, "", "request body must be a JSON object");
  static const std::set<std::string> known = {"scene",      "input",   "direction", "slice_height", "inlet_speed",
                                              "mc_samples", "dropout_p", "seed",    "comfort"};
  for (const auto& [key, value] : j.items()) {
    if (!known.count(key)) throw RequestError(400, key, "unknown field '" + key + "'");
  }
  InferenceRequest r;
  if (j.contains("scene")) {
    try {
      r.scene = scene_from_json(j.at("scene"));
    } catch (const GeometryError& e) {
      throw RequestError(422, "scene", e.what());
    } catch (const std::exception& e) {
      throw RequestError(400, "scene", e.what());
    }
  }
  if (j.contains("input")) {
    const auto text = detail::typed_field<std::string>(j, "input", "a base64 string");
    try {
      const FieldFile f = field_from_base64(text);
      if (f.role != FieldRole::InputStack) throw RequestError(400, "input", "input field must have the input-stack role");
      r.input = encoded_input_from(f);
    } catch (const RequestError&) {
      throw;
    } catch (const std::exception& e) {
      throw RequestError(400, "input", e.what());
    }
  }
  if (j.contains("direction")) {
    const auto d = parse_direction(detail::typed_field<std::string>(j, "direction", "a string"));
    if (!d) throw RequestError(422, "direction", "direction must be one of N, NE, E, SE, S, SW, W, NW");
    r.direction = *d;
  }
  if (j.contains("slice_height")) r.slice_height = detail::typed_field<double>(j, "slice_height", "a number");
  if (j.contains("inlet_speed")) r.inlet_speed = detail::typed_field<double>(j, "inlet_speed", "a number");
  if (j.contains("mc_samples")) {
    if (!j.at("mc_samples").is_number_integer()) throw RequestError(400, "mc_samples", "'mc_samples' must be an integer");
    const auto n = j.at("mc_samples").get<long long>();
    if (n < 1 || n > kMaxMcSamples) {
      throw RequestError(422, "mc_samples", "mc_samples must be in [1, " + std::to_string(kMaxMcSamples) + "]");
    }
    r.mc_samples = static_cast<int>(n);
  }
  if (j.contains("dropout_p")) r.dropout_p = detail::typed_field<double>(j, "dropout_p", "a number");
  if (j.contains("seed")) {
    if (!j.at("seed").is_number_unsigned()) throw RequestError(400, "seed", "'seed' must be a non-negative integer");
    r.seed = j.at("seed").get<std::uint64_t>();
  }
  if (j.contains("comfort")) {
    try {
      r.comfort = comfort_spec_from_json(j.at("comfort"));
    } catch (const std::invalid_argument& e) {
      throw RequestError(422, "comfort", e.what());
    } catch (const std::exception& e) {
      throw RequestError(400, "comfort", e.what());
    }
  }
  validate(r);
  return r;
}

inline nlohmann::json to_json(const InferenceRequest& r) {
  nlohmann::json j;
  if (r.scene) j["scene"] = scene_to_json(*r.scene);
  if (r.input) j["input"] = field_to_base64(to_field_file(*r.input));
  j["direction"] = std::string(to_string(r.direction));
  j["slice_height"] = r.slice_height;
  j["inlet_speed"] = r.inlet_speed;
  j["mc_samples"] = r.mc_samples;
  j["dropout_p"] = r.dropout_p;
  if (r.seed) j["seed"] = *r.seed;
  j["comfort"] = to_json(r.comfort);
  return j;
}

// ---------------------------------------------------------------------------
// Engine

struct InferenceResult {
  Grid2D<float> mean;
  Grid2D<float> stddev;
  Grid2D<int> comfort;
  BoolGrid mask;  // 1 = solid
  std::uint64_t seed = 0;
  int mc_samples = 0;
  double dropout_p = 0.0;
  double timing_ms = 0.0;
};

/// Loaded model; immutable after construction. Each call runs on a private
/// copy of the generator, so calls may run concurrently.
class InferenceEngine {
 public:
  explicit InferenceEngine(ModelCheckpoint ck)
      : checkpoint_(std::move(ck)),
        generator_(load_generator(checkpoint_)),
        norm_(checkpoint_normalization(checkpoint_)),
        id_(::urbanwind::checkpoint_id(checkpoint_)) {}

  static std::shared_ptr<const InferenceEngine> from_file(const std::string& path) {
    return std::make_shared<const InferenceEngine>(load_checkpoint(path));
  }

  int grid() const { return generator_.config().input_size; }
  const std::string& checkpoint_id() const { return id_; }
  const Normalization& normalization() const { return norm_; }

  nlohmann::json info() const {
    return {{"checkpoint_id", id_},
            {"metadata", checkpoint_.metadata},
            {"normalization", to_json(norm_)},
            {"grid", grid()},
            {"tensors", checkpoint_.tensors.size()}};
  }

  InferenceResult infer(const InferenceRequest& req) const {
    validate(req);
    const auto t0 = std::chrono::steady_clock::now();
    EncodedInput enc;
    BoolGrid mask;
    if (req.scene) {
      const EncodeResult er = encode_with_canopy(align_to_wind(*req.scene, req.direction), req.slice_height, grid(),
                                                 req.direction);
      mask = flow_mask(er);
      enc = er.input;
    } else {
      enc = *req.input;
      if (enc.rows() != grid() || enc.cols() != grid()) {
        throw RequestError(422, "input", "input is " + std::to_string(enc.rows()) + "x" + std::to_string(enc.cols()) +
                                             ", model expects " + std::to_string(grid()) + "x" +
                                             std::to_string(grid()));
      }
      mask = obstacle_mask(enc);
    }
    for (const auto& ch : enc.channels) {
      for (float v : ch.values()) {
        if (!std::isfinite(v)) throw RequestError(422, "input", "input contains non-finite values");
      }
    }
    InferenceResult out;
    out.seed = req.seed ? *req.seed : fresh_seed();
    out.mc_samples = req.mc_samples;
    out.dropout_p = req.dropout_p;
    Generator<float> g = generator_;
    const UncertaintyResult u = mc_predict(g, input_tensor(enc, norm_), norm_, req.mc_samples, req.dropout_p, out.seed);
    out.mean = u.mean;
    out.stddev = u.stddev();
    out.mask = mask;
    WindField wf{out.mean, BoolGrid(mask.rows(), mask.cols()), req.direction, req.slice_height, ""};
    for (std::size_t i = 0; i < mask.size(); ++i) wf.valid.values()[i] = mask.values()[i] ? 0 : 1;
    out.comfort = comfort_map(wf, req.inlet_speed, req.comfort);
    out.timing_ms = std::max(1e-3, std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count());
    return out;
  }

  nlohmann::json respond(const InferenceResult& r) const {
    return {{"mean", field_to_base64(grid_field(r.mean, FieldRole::Prediction))},
            {"stddev", field_to_base64(grid_field(r.stddev, FieldRole::StdDev))},
            {"comfort", field_to_base64(grid_field(r.comfort, FieldRole::Comfort))},
            {"mask", field_to_base64(grid_field(r.mask, FieldRole::Mask))},
            {"shape", {r.mean.rows(), r.mean.cols()}},
            {"seed", r.seed},
            {"mc_samples", r.mc_samples},
            {"dropout_p", r.dropout_p},
            {"timing_ms", r.timing_ms},
            {"model", {{"checkpoint_id", id_}, {"normalization", to_json(norm_)}}}};
  }

 private:
  static std::uint64_t fresh_seed() {
    std::random_device rd;
    return (static_cast<std::uint64_t>(rd()) << 32) ^ rd();
  }

  ModelCheckpoint checkpoint_;
  Generator<float> generator_;
  Normalization norm_;
  std::string id_;
};

inline nlohmann::json error_body(int status, const std::string& field, const std::string& message) {
  return {{"error", {{"status", status}, {"field", field}, {"message", message}}}};
}

}  // namespace urbanwind
