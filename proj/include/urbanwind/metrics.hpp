// Error statistics, per-class reports and pedestrian comfort classes.
#pragma once

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "urbanwind/dataset.hpp"
#include "urbanwind/flow_oracle.hpp"

namespace urbanwind {

enum class MaskPolicy { OpenCells, AllCells };

inline const char* to_string(MaskPolicy p) { return p == MaskPolicy::OpenCells ? "open-cells" : "all-cells"; }

/// Absolute per-cell errors. OpenCells skips cells the truth marks solid.
inline std::vector<double> error_stats(const WindField& pred, const WindField& truth,
                                       MaskPolicy policy = MaskPolicy::OpenCells) {
  if (!pred.factors.same_shape(truth.factors)) throw std::invalid_argument("error_stats: shape mismatch");
  if (pred.scene_id != truth.scene_id || pred.direction != truth.direction || pred.slice_height != truth.slice_height) {
    throw std::invalid_argument("error_stats: provenance mismatch (" + pred.scene_id + "/" +
                                std::string(to_string(pred.direction)) + " vs " + truth.scene_id + "/" +
                                std::string(to_string(truth.direction)) + ")");
  }
  const bool masked = policy == MaskPolicy::OpenCells && !truth.valid.empty();
  std::vector<double> out;
  out.reserve(truth.factors.size());
  for (std::size_t i = 0; i < truth.factors.size(); ++i) {
    if (masked && !truth.valid.values()[i]) continue;
    out.push_back(std::abs(static_cast<double>(pred.factors.values()[i]) - truth.factors.values()[i]));
  }
  return out;
}

/// Nearest-rank 90th percentile: the ceil(0.9 N)-th smallest value.
inline double percentile_90(std::vector<double> v) {
  if (v.empty()) throw std::invalid_argument("percentile_90: empty sample");
  const auto rank = static_cast<std::size_t>(std::ceil(0.9 * static_cast<double>(v.size()) - 1e-9));
  const std::size_t k = std::max<std::size_t>(rank, 1) - 1;
  std::nth_element(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(k), v.end());
  return v[k];
}

/// Wind-factor error equivalent to `tolerance` m/s at the given inlet speed.
inline double factor_error_threshold(double inlet_speed, double tolerance = 1.0) {
  if (!(inlet_speed > 0.0)) throw std::invalid_argument("inlet speed must be positive");
  return tolerance / inlet_speed;
}

struct ErrorSummary {
  std::size_t n = 0;
  double mean = 0.0;
  double stddev = 0.0;  // population
  double p90 = 0.0;
};

inline ErrorSummary summarize(const std::vector<double>& v) {
  ErrorSummary s;
  s.n = v.size();
  if (v.empty()) return s;
  double sum = 0.0;
  for (double x : v) sum += x;
  s.mean = sum / static_cast<double>(v.size());
  double ss = 0.0;
  for (double x : v) ss += (x - s.mean) * (x - s.mean);
  s.stddev = std::sqrt(ss / static_cast<double>(v.size()));
  s.p90 = percentile_90(v);
  return s;
}

// ---------------------------------------------------------------------------
// Comfort

struct ComfortBand {
  std::string name;
  double upper = 0.0;  // m/s, inclusive
};

struct ComfortSpec {
  std::vector<ComfortBand> bands{{"sitting", 4.0}, {"standing", 6.0}, {"strolling", 8.0}, {"walking", 10.0}};
  std::string overflow_name = "uncomfortable";

  void validate() const {
    if (bands.empty()) throw std::invalid_argument("comfort spec needs at least one band");
    for (std::size_t i = 0; i < bands.size(); ++i) {
      if (!std::isfinite(bands[i].upper)) throw std::invalid_argument("comfort band bound must be finite");
      if (i > 0 && !(bands[i].upper > bands[i - 1].upper)) {
        throw std::invalid_argument("comfort band bounds must be strictly increasing");
      }
    }
  }
};

inline constexpr int kSolidComfortClass = -1;

inline nlohmann::json to_json(const ComfortSpec& s) {
  nlohmann::json j;
  for (const ComfortBand& b : s.bands) j["bands"].push_back({{"name", b.name}, {"upper", b.upper}});
  j["overflow"] = s.overflow_name;
  return j;
}

inline ComfortSpec comfort_spec_from_json(const nlohmann::json& j) {
  ComfortSpec s;
  s.bands.clear();
  for (const auto& b : j.at("bands")) s.bands.push_back({b.at("name").get<std::string>(), b.at("upper").get<double>()});
  s.overflow_name = j.value("overflow", s.overflow_name);
  s.validate();
  return s;
}

inline ComfortSpec load_comfort_spec(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open comfort spec " + path);
  return comfort_spec_from_json(nlohmann::json::parse(in));
}

/// Band index of one speed: first band with speed <= upper; band count when
/// the speed exceeds every bound.
inline int comfort_class(double speed, const ComfortSpec& spec) {
  for (std::size_t i = 0; i < spec.bands.size(); ++i) {
    if (speed <= spec.bands[i].upper) return static_cast<int>(i);
  }
  return static_cast<int>(spec.bands.size());
}

/// Per-cell band of factor * inlet speed; solid cells get kSolidComfortClass.
inline Grid2D<int> comfort_map(const WindField& f, double inlet_speed, const ComfortSpec& spec) {
  spec.validate();
  Grid2D<int> out(f.rows(), f.cols());
  for (std::size_t i = 0; i < out.size(); ++i) {
    const bool solid = !f.valid.empty() && !f.valid.values()[i];
    out.values()[i] = solid ? kSolidComfortClass : comfort_class(f.factors.values()[i] * inlet_speed, spec);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Reports

struct EvalSample {
  WindField pred;
  WindField truth;
  ComplexityClass complexity = ComplexityClass::SimpleExtrusion;
};

struct PolicyReport {
  ErrorSummary pooled;                                  // over all included cells
  ErrorSummary per_sample;                              // over per-sample MAEs
  std::map<ComplexityClass, ErrorSummary> per_class;    // pooled within class
  std::map<ComplexityClass, std::size_t> class_samples;
  std::map<int, ErrorSummary> per_band;                 // by the truth cell's comfort class
};

/// Comfort bands used to break errors down by the true wind condition.
struct BandContext {
  ComfortSpec spec;
  double inlet_speed = 5.0;
};

struct EvalReport {
  std::size_t n_samples = 0;
  PolicyReport open_cells;
  PolicyReport all_cells;

  BandContext bands;

  const PolicyReport& at(MaskPolicy p) const { return p == MaskPolicy::OpenCells ? open_cells : all_cells; }
};

inline PolicyReport policy_report(std::span<const EvalSample> samples, MaskPolicy policy,
                                  const BandContext& bands = {}) {
  PolicyReport r;
  std::vector<double> pooled;
  std::vector<double> sample_mae;
  std::map<ComplexityClass, std::vector<double>> by_class;
  std::map<int, std::vector<double>> by_band;
  for (const EvalSample& s : samples) {
    const std::vector<double> e = error_stats(s.pred, s.truth, policy);
    pooled.insert(pooled.end(), e.begin(), e.end());
    const Grid2D<int> cm = comfort_map(s.truth, bands.inlet_speed, bands.spec);
    const bool masked = policy == MaskPolicy::OpenCells && !s.truth.valid.empty();
    for (std::size_t i = 0, k = 0; i < cm.size(); ++i) {
      if (masked && !s.truth.valid.values()[i]) continue;
      by_band[cm.values()[i]].push_back(e[k++]);
    }
    auto& cls = by_class[s.complexity];
    cls.insert(cls.end(), e.begin(), e.end());
    ++r.class_samples[s.complexity];
    if (!e.empty()) sample_mae.push_back(summarize(e).mean);
  }
  r.pooled = summarize(pooled);
  r.per_sample = summarize(sample_mae);
  for (const auto& [cls, v] : by_class) r.per_class[cls] = summarize(v);
  for (const auto& [band, v] : by_band) r.per_band[band] = summarize(v);
  return r;
}

inline EvalReport evaluate(std::span<const EvalSample> samples, const BandContext& bands = {}) {
  EvalReport r;
  r.n_samples = samples.size();
  r.bands = bands;
  r.open_cells = policy_report(samples, MaskPolicy::OpenCells, bands);
  r.all_cells = policy_report(samples, MaskPolicy::AllCells, bands);
  return r;
}

inline std::string band_name(int band, const ComfortSpec& spec) {
  if (band == kSolidComfortClass) return "solid";
  if (band >= 0 && band < static_cast<int>(spec.bands.size())) return spec.bands[static_cast<std::size_t>(band)].name;
  return spec.overflow_name;
}

inline nlohmann::json to_json(const ErrorSummary& s) {
  return {{"n_cells", s.n}, {"mae_mean", s.mean}, {"mae_std", s.stddev}, {"p90", s.p90}};
}

inline nlohmann::json to_json(const PolicyReport& p, const ComfortSpec& spec = {}) {
  nlohmann::json j = to_json(p.pooled);
  j["per_sample"] = {{"n_samples", p.per_sample.n},
                     {"mae_mean", p.per_sample.mean},
                     {"mae_std", p.per_sample.stddev},
                     {"p90", p.per_sample.p90}};
  j["per_class"] = nlohmann::json::object();
  for (const auto& [cls, s] : p.per_class) {
    nlohmann::json c = to_json(s);
    c["n_samples"] = p.class_samples.at(cls);
    j["per_class"][to_string(cls)] = c;
  }
  j["per_band"] = nlohmann::json::object();
  for (const auto& [band, s] : p.per_band) j["per_band"][band_name(band, spec)] = to_json(s);
  return j;
}

/// Keys sort alphabetically, so the text form is stable across runs.
inline nlohmann::json to_json(const EvalReport& r) {
  nlohmann::json j = to_json(r.open_cells, r.bands.spec);
  j["mask_policy"] = to_string(MaskPolicy::OpenCells);
  j["n_samples"] = r.n_samples;
  j["all_cells"] = to_json(r.all_cells, r.bands.spec);
  j["band_inlet_speed"] = r.bands.inlet_speed;
  return j;
}

/// Constant field minimizing the pooled error (the median of the included
/// truth cells) and its pooled MAE.
inline std::pair<double, double> best_constant_baseline(std::span<const EvalSample> samples,
                                                        MaskPolicy policy = MaskPolicy::OpenCells) {
  std::vector<double> values;
  for (const EvalSample& s : samples) {
    for (std::size_t i = 0; i < s.truth.factors.size(); ++i) {
      if (policy == MaskPolicy::OpenCells && !s.truth.valid.empty() && !s.truth.valid.values()[i]) continue;
      values.push_back(s.truth.factors.values()[i]);
    }
  }
  if (values.empty()) throw std::invalid_argument("baseline: no cells");
  std::vector<double> sorted = values;
  std::sort(sorted.begin(), sorted.end());
  const double c = sorted[(sorted.size() - 1) / 2];
  double sum = 0.0;
  for (double v : values) sum += std::abs(v - c);
  return {c, sum / static_cast<double>(values.size())};
}

}  // namespace urbanwind
