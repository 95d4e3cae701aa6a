// Dataset generation, manifests and the disjoint train/test split.
#pragma once

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <mutex>
#include <optional>
#include <set>
#include <stdexcept>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "urbanwind/field_io.hpp"
#include "urbanwind/flow_oracle.hpp"
#include "urbanwind/geometry.hpp"
#include "urbanwind/nn/random.hpp"

namespace urbanwind {

// ---------------------------------------------------------------------------
// Complexity classes

enum class ComplexityClass { SimpleExtrusion, LocalFeatures, Topography, Trees };

inline constexpr std::array<ComplexityClass, 4> kAllClasses = {
    ComplexityClass::SimpleExtrusion, ComplexityClass::LocalFeatures, ComplexityClass::Topography,
    ComplexityClass::Trees};

inline const char* to_string(ComplexityClass c) {
  switch (c) {
    case ComplexityClass::SimpleExtrusion: return "simple-extrusion";
    case ComplexityClass::LocalFeatures: return "local-features";
    case ComplexityClass::Topography: return "topography";
    case ComplexityClass::Trees: return "trees";
  }
  return "unknown";
}

inline ComplexityClass parse_complexity_class(const std::string& s) {
  for (ComplexityClass c : kAllClasses) {
    if (s == to_string(c)) return c;
  }
  throw std::invalid_argument("unknown complexity class '" + s + "'");
}

/// Precedence when several apply: trees, topography, local features.
inline ComplexityClass complexity_class(const UrbanScene& s) {
  if (!s.trees.empty()) return ComplexityClass::Trees;
  if (!s.terrain.is_flat()) return ComplexityClass::Topography;
  for (const Building& b : s.buildings) {
    if (!b.voids.empty()) return ComplexityClass::LocalFeatures;
  }
  return ComplexityClass::SimpleExtrusion;
}

// ---------------------------------------------------------------------------
// Split

struct SceneSplit {
  std::vector<std::string> train;
  std::vector<std::string> test;
};

/// Seeded partition of distinct scene ids; floor(ratio * N) go to train.
inline SceneSplit split_by_scene(const std::vector<std::string>& scene_ids, double ratio = 0.8,
                                 std::uint64_t seed = 0) {
  if (!(ratio > 0.0 && ratio < 1.0)) throw std::invalid_argument("split ratio must be in (0, 1)");
  std::vector<std::string> ids;
  std::set<std::string> seen;
  for (const std::string& id : scene_ids) {
    if (seen.insert(id).second) ids.push_back(id);
  }
  if (ids.size() < 2) throw std::invalid_argument("split needs at least 2 distinct scenes");
  std::sort(ids.begin(), ids.end());
  nn::Rng rng(seed);
  rng.shuffle(ids.begin(), ids.end());
  auto n_train = static_cast<std::size_t>(std::floor(ratio * static_cast<double>(ids.size()) + 1e-9));
  n_train = std::clamp<std::size_t>(n_train, 1, ids.size() - 1);
  SceneSplit out;
  out.train.assign(ids.begin(), ids.begin() + static_cast<std::ptrdiff_t>(n_train));
  out.test.assign(ids.begin() + static_cast<std::ptrdiff_t>(n_train), ids.end());
  return out;
}

// ---------------------------------------------------------------------------
// Manifest

enum class Split { Unassigned, Train, Test };

inline const char* to_string(Split s) {
  switch (s) {
    case Split::Train: return "train";
    case Split::Test: return "test";
    case Split::Unassigned: return "unassigned";
  }
  return "unassigned";
}

struct ManifestEntry {
  std::string scene_id;
  Direction direction = Direction::W;
  double slice_height = 0.0;
  std::string input_path;  // relative to the manifest directory
  std::string truth_path;
  ComplexityClass complexity = ComplexityClass::SimpleExtrusion;
  Split split = Split::Unassigned;
  bool converged = false;
  int iterations = 0;
  double residual = 0.0;
};

struct ManifestFailure {
  std::string scene_id;
  Direction direction = Direction::W;
  double slice_height = 0.0;
  std::string error;  // SolverError kind or exception category
  std::string message;
};

struct DatasetManifest {
  int grid = 0;
  double meters_per_cell = 0.0;
  std::uint64_t split_seed = 0;
  double split_ratio = 0.8;
  nlohmann::json generation = nlohmann::json::object();  // parameters that produced the files
  std::vector<ManifestEntry> entries;
  std::vector<ManifestFailure> failures;

  std::vector<const ManifestEntry*> select(Split s) const {
    std::vector<const ManifestEntry*> out;
    for (const ManifestEntry& e : entries) {
      if (e.split == s) out.push_back(&e);
    }
    return out;
  }
};

inline nlohmann::json manifest_to_json(const DatasetManifest& m) {
  nlohmann::json j;
  j["format"] = "urbanwind-manifest";
  j["version"] = 1;
  j["grid"] = m.grid;
  j["meters_per_cell"] = m.meters_per_cell;
  j["split"] = {{"seed", m.split_seed}, {"ratio", m.split_ratio}};
  j["generation"] = m.generation;
  j["entries"] = nlohmann::json::array();
  for (const ManifestEntry& e : m.entries) {
    j["entries"].push_back({{"scene_id", e.scene_id},
                            {"direction", std::string(to_string(e.direction))},
                            {"slice_height", e.slice_height},
                            {"input", e.input_path},
                            {"truth", e.truth_path},
                            {"class", to_string(e.complexity)},
                            {"split", to_string(e.split)},
                            {"converged", e.converged},
                            {"iterations", e.iterations},
                            {"residual", e.residual}});
  }
  j["failures"] = nlohmann::json::array();
  for (const ManifestFailure& f : m.failures) {
    j["failures"].push_back({{"scene_id", f.scene_id},
                             {"direction", std::string(to_string(f.direction))},
                             {"slice_height", f.slice_height},
                             {"error", f.error},
                             {"message", f.message}});
  }
  return j;
}

inline Direction direction_from_json(const nlohmann::json& j) {
  const auto d = parse_direction(j.get<std::string>());
  if (!d) throw std::invalid_argument("unknown direction '" + j.get<std::string>() + "'");
  return *d;
}

inline DatasetManifest manifest_from_json(const nlohmann::json& j) {
  DatasetManifest m;
  m.grid = j.at("grid").get<int>();
  m.meters_per_cell = j.at("meters_per_cell").get<double>();
  m.split_seed = j.at("split").at("seed").get<std::uint64_t>();
  m.split_ratio = j.at("split").at("ratio").get<double>();
  if (j.contains("generation")) m.generation = j.at("generation");
  for (const auto& je : j.at("entries")) {
    ManifestEntry e;
    e.scene_id = je.at("scene_id").get<std::string>();
    e.direction = direction_from_json(je.at("direction"));
    e.slice_height = je.at("slice_height").get<double>();
    e.input_path = je.at("input").get<std::string>();
    e.truth_path = je.at("truth").get<std::string>();
    e.complexity = parse_complexity_class(je.at("class").get<std::string>());
    const std::string split = je.at("split").get<std::string>();
    e.split = split == "train" ? Split::Train : split == "test" ? Split::Test : Split::Unassigned;
    e.converged = je.value("converged", true);
    e.iterations = je.value("iterations", 0);
    e.residual = je.value("residual", 0.0);
    m.entries.push_back(std::move(e));
  }
  if (j.contains("failures")) {
    for (const auto& jf : j.at("failures")) {
      m.failures.push_back({jf.at("scene_id").get<std::string>(), direction_from_json(jf.at("direction")),
                            jf.at("slice_height").get<double>(), jf.at("error").get<std::string>(),
                            jf.value("message", "")});
    }
  }
  return m;
}

inline void save_manifest(const DatasetManifest& m, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw FormatError(FormatError::Kind::Io, "cannot write " + path.string());
  out << manifest_to_json(m).dump(2) << '\n';
}

inline DatasetManifest load_manifest(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw FormatError(FormatError::Kind::Io, "cannot open " + path.string());
  try {
    return manifest_from_json(nlohmann::json::parse(in));
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(FormatError::Kind::BadHeader, "manifest " + path.string() + ": " + e.what());
  }
}

/// Labels every entry train or test by splitting its distinct scene ids.
inline void assign_split(DatasetManifest& m, double ratio, std::uint64_t seed) {
  std::vector<std::string> ids;
  for (const ManifestEntry& e : m.entries) ids.push_back(e.scene_id);
  const SceneSplit split = split_by_scene(ids, ratio, seed);
  const std::set<std::string> train(split.train.begin(), split.train.end());
  for (ManifestEntry& e : m.entries) e.split = train.count(e.scene_id) ? Split::Train : Split::Test;
  m.split_seed = seed;
  m.split_ratio = ratio;
}

/// Throws std::runtime_error when a scene occurs in both splits.
inline void check_disjoint(const DatasetManifest& m) {
  std::map<std::string, Split> seen;
  for (const ManifestEntry& e : m.entries) {
    if (e.split == Split::Unassigned) continue;
    auto [it, fresh] = seen.emplace(e.scene_id, e.split);
    if (!fresh && it->second != e.split) {
      throw std::runtime_error("scene " + e.scene_id + " appears in both train and test");
    }
  }
}

/// Every file exists, decodes, and has the manifest's grid shape.
inline void check_files(const DatasetManifest& m, const std::filesystem::path& dir) {
  for (const ManifestEntry& e : m.entries) {
    const FieldFile in = read_field((dir / e.input_path).string());
    const FieldFile truth = read_field((dir / e.truth_path).string());
    const auto g = static_cast<std::uint32_t>(m.grid);
    if (in.role != FieldRole::InputStack || in.channels != 4 || in.height != g || in.width != g) {
      throw FormatError(FormatError::Kind::BadHeader, e.input_path + " is not a " + std::to_string(m.grid) +
                                                          "x" + std::to_string(m.grid) + " input stack");
    }
    if (truth.role != FieldRole::Truth || truth.channels != 2 || truth.height != g || truth.width != g) {
      throw FormatError(FormatError::Kind::BadHeader, e.truth_path + " is not a " + std::to_string(m.grid) +
                                                          "x" + std::to_string(m.grid) + " truth field");
    }
  }
}

// ---------------------------------------------------------------------------
// Generation

struct GenerationConfig {
  int grid = 64;
  std::vector<Direction> directions{kAllDirections.begin(), kAllDirections.end()};
  std::vector<double> slice_heights{1.5};
  SolverConfig solver;
  double split_ratio = 0.8;
  std::uint64_t split_seed = 0;
  unsigned threads = 0;  // 0: hardware concurrency
  bool require_converged = false;  // non-converged fields become failures
};

inline std::string entry_stem(const std::string& scene_id, Direction d, double slice) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%s_%05.1f", std::string(to_string(d)).c_str(), slice);
  return scene_id + "_" + buf;
}

/// Solver mask for an aligned, encoded scene: probe inside solid material
/// or inside a canopy spanning the probe plane.
inline BoolGrid flow_mask(const EncodeResult& enc) {
  BoolGrid mask = obstacle_mask(enc.input);
  for (std::size_t i = 0; i < mask.size(); ++i) mask.values()[i] |= enc.canopy_blocking.values()[i];
  return mask;
}

struct SampleResult {
  EncodedInput input;
  SolveResult solution;
};

/// Align, encode and solve one (scene, direction, slice) case.
inline SampleResult simulate(const UrbanScene& scene, Direction d, double slice, int grid, SolverConfig solver) {
  const UrbanScene aligned = align_to_wind(scene, d);
  EncodeResult enc = encode_with_canopy(aligned, slice, grid, d);
  solver.cell_size = enc.input.meters_per_cell;
  const BoolGrid mask = flow_mask(enc);
  SampleResult out{std::move(enc.input), solve(mask, solver)};
  out.solution.field.direction = d;
  out.solution.field.slice_height = slice;
  out.solution.field.scene_id = scene.scene_id;
  return out;
}

/// Writes input/truth pairs for every (scene, direction, slice) under `dir`
/// and returns the split manifest. Per-case failures are recorded, never
/// thrown. Output is independent of the thread count.
inline DatasetManifest generate_dataset(const std::vector<UrbanScene>& scenes, const GenerationConfig& cfg,
                                        const std::filesystem::path& dir,
                                        const std::function<void(std::size_t, std::size_t)>& progress = {}) {
  if (scenes.empty()) throw std::invalid_argument("generate_dataset: no scenes");
  if (cfg.grid <= 0) throw std::invalid_argument("generate_dataset: grid must be positive");
  cfg.solver.validate();
  std::set<std::string> ids;
  for (const UrbanScene& s : scenes) {
    validate(s);
    if (!ids.insert(s.scene_id).second) throw std::invalid_argument("duplicate scene id " + s.scene_id);
  }
  std::filesystem::create_directories(dir / "fields");

  struct Job {
    std::size_t scene;
    Direction direction;
    double slice;
  };
  std::vector<Job> jobs;
  for (std::size_t s = 0; s < scenes.size(); ++s) {
    for (Direction d : cfg.directions) {
      for (double h : cfg.slice_heights) jobs.push_back({s, d, h});
    }
  }
  std::vector<std::optional<ManifestEntry>> entries(jobs.size());
  std::vector<std::optional<ManifestFailure>> failures(jobs.size());

  auto run = [&](std::size_t k) {
    const Job& job = jobs[k];
    const UrbanScene& scene = scenes[job.scene];
    ManifestFailure failure{scene.scene_id, job.direction, job.slice, "", ""};
    try {
      SampleResult r = simulate(scene, job.direction, job.slice, cfg.grid, cfg.solver);
      if (cfg.require_converged && !r.solution.converged) {
        r.solution.require_converged();
      }
      const std::string stem = entry_stem(scene.scene_id, job.direction, job.slice);
      ManifestEntry e;
      e.scene_id = scene.scene_id;
      e.direction = job.direction;
      e.slice_height = job.slice;
      e.input_path = "fields/" + stem + ".input.wfld";
      e.truth_path = "fields/" + stem + ".truth.wfld";
      e.complexity = complexity_class(scene);
      e.converged = r.solution.converged;
      e.iterations = r.solution.iterations;
      e.residual = r.solution.final_residual;
      write_field((dir / e.input_path).string(), to_field_file(r.input));
      write_field((dir / e.truth_path).string(), to_field_file(r.solution.field, FieldRole::Truth));
      entries[k] = std::move(e);
    } catch (const SolverError& e) {
      failure.error = to_string(e.kind());
      failure.message = e.what();
      failures[k] = failure;
    } catch (const GeometryError& e) {
      failure.error = "Geometry";
      failure.message = e.what();
      failures[k] = failure;
    }
  };

  std::atomic<std::size_t> next{0};
  std::atomic<std::size_t> done{0};
  std::mutex progress_mutex;
  auto worker = [&] {
    for (std::size_t k = next++; k < jobs.size(); k = next++) {
      run(k);
      const std::size_t n = ++done;
      if (progress) {
        std::lock_guard lock(progress_mutex);
        progress(n, jobs.size());
      }
    }
  };
  const unsigned threads = cfg.threads != 0 ? cfg.threads : std::max(1u, std::thread::hardware_concurrency());
  if (threads <= 1) {
    worker();
  } else {
    std::vector<std::jthread> pool;
    for (unsigned t = 0; t < threads; ++t) pool.emplace_back(worker);
  }

  DatasetManifest m;
  m.grid = cfg.grid;
  m.meters_per_cell = scenes.front().size / cfg.grid;
  for (std::size_t k = 0; k < jobs.size(); ++k) {
    if (entries[k]) m.entries.push_back(std::move(*entries[k]));
    if (failures[k]) m.failures.push_back(std::move(*failures[k]));
  }
  std::set<std::string> usable;
  for (const ManifestEntry& e : m.entries) usable.insert(e.scene_id);
  if (usable.size() >= 2) assign_split(m, cfg.split_ratio, cfg.split_seed);
  return m;
}

// ---------------------------------------------------------------------------
// Synthetic scenes

struct SyntheticSceneConfig {
  double size = 512.0;
  int terrain_cells = 64;
  int min_buildings = 3;
  int max_buildings = 8;
  double min_footprint = 24.0;  // meters
  double max_footprint = 80.0;
  double min_height = 10.0;
  double max_height = 120.0;
};

namespace detail {

inline Polygon rectangle(Point c, double w, double h, double angle) {
  const double ca = std::cos(angle);
  const double sa = std::sin(angle);
  Polygon p;
  for (auto [dx, dy] : {std::pair{-0.5, -0.5}, {0.5, -0.5}, {0.5, 0.5}, {-0.5, 0.5}}) {
    const double x = dx * w;
    const double y = dy * h;
    p.push_back({c.x + ca * x - sa * y, c.y + sa * x + ca * y});
  }
  return p;
}

}  // namespace detail

/// Random scene whose complexity class is `cls`. Deterministic in `seed`.
inline UrbanScene synthetic_scene(const std::string& id, ComplexityClass cls, std::uint64_t seed,
                                  const SyntheticSceneConfig& cfg = {}) {
  nn::Rng rng(seed);
  UrbanScene s;
  s.scene_id = id;
  s.size = cfg.size;
  const double L = cfg.size;

  if (cls == ComplexityClass::Topography) {
    const int n = cfg.terrain_cells;
    Grid2D<double> z(n, n, 0.0);
    const int hills = 1 + static_cast<int>(rng.below(3));
    for (int k = 0; k < hills; ++k) {
      const Point c{rng.uniform(0.2, 0.8) * L, rng.uniform(0.2, 0.8) * L};
      const double amp = rng.uniform(3.0, 10.0);
      const double sigma = rng.uniform(0.05, 0.10) * L;
      for (int r = 0; r < n; ++r) {
        for (int col = 0; col < n; ++col) {
          const double dx = (col + 0.5) * L / n - c.x;
          const double dy = (r + 0.5) * L / n - c.y;
          z(r, col) += amp * std::exp(-(dx * dx + dy * dy) / (2.0 * sigma * sigma));
        }
      }
    }
    s.terrain.samples = std::move(z);
  }

  const int count = cfg.min_buildings + static_cast<int>(rng.below(static_cast<std::uint64_t>(
                                            cfg.max_buildings - cfg.min_buildings + 1)));
  std::vector<std::pair<Point, double>> placed;  // center, radius
  for (int k = 0, attempts = 0; k < count && attempts < 200; ++attempts) {
    const double w = rng.uniform(cfg.min_footprint, cfg.max_footprint);
    const double h = rng.uniform(cfg.min_footprint, cfg.max_footprint);
    const double radius = 0.5 * std::hypot(w, h);
    const Point c{rng.uniform(0.15 * L + radius, 0.85 * L - radius), rng.uniform(0.15 * L + radius, 0.85 * L - radius)};
    const double angle = rng.uniform() < 0.5 ? 0.0 : rng.uniform(-0.6, 0.6);
    const double height = rng.uniform(cfg.min_height, cfg.max_height);
    bool overlaps = false;
    for (const auto& [pc, pr] : placed) overlaps |= std::hypot(pc.x - c.x, pc.y - c.y) < pr + radius + 8.0;
    if (overlaps) continue;
    placed.emplace_back(c, radius);
    Building b;
    b.footprint = detail::rectangle(c, w, h, angle);
    b.base = s.terrain.at(c, L);
    b.height = height;
    if (cls == ComplexityClass::LocalFeatures && (k == 0 || rng.uniform() < 0.5)) {
      // Arcade through the building at street level, across the flow or along it.
      const bool across = rng.uniform() < 0.5;
      const double span = rng.uniform(0.25, 0.5);
      const double vw = across ? w * 1.2 : w * span;
      const double vh = across ? h * span : h * 1.2;
      Polygon cut = clip_to_square(detail::rectangle(c, vw, vh, angle), L);
      b.voids.push_back({std::move(cut), 0.0, rng.uniform(4.0, 9.0)});
    }
    s.buildings.push_back(std::move(b));
    ++k;
  }

  if (cls == ComplexityClass::Trees) {
    const int trees = 3 + static_cast<int>(rng.below(8));
    for (int k = 0, attempts = 0; k < trees && attempts < 200; ++attempts) {
      const double radius = rng.uniform(6.0, 16.0);
      const Point c{rng.uniform(0.1, 0.9) * L, rng.uniform(0.1, 0.9) * L};
      bool overlaps = false;
      for (const auto& [pc, pr] : placed) overlaps |= std::hypot(pc.x - c.x, pc.y - c.y) < pr + radius;
      if (overlaps) continue;
      s.trees.push_back({Disc{c, radius}, rng.uniform(0.5, 3.0), rng.uniform(8.0, 15.0)});
      ++k;
    }
  }
  validate(s);
  return s;
}

/// `count` scenes cycling through the four complexity classes.
inline std::vector<UrbanScene> synthetic_scenes(int count, std::uint64_t seed, const SyntheticSceneConfig& cfg = {}) {
  std::vector<UrbanScene> out;
  for (int i = 0; i < count; ++i) {
    char id[32];
    std::snprintf(id, sizeof id, "scene%04d", i);
    out.push_back(synthetic_scene(id, kAllClasses[static_cast<std::size_t>(i) % 4],
                                  nn::splitmix64(seed ^ nn::splitmix64(static_cast<std::uint64_t>(i))), cfg));
  }
  return out;
}

}  // namespace urbanwind
