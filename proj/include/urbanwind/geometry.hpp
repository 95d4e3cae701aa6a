// Vector urban scenes, wind alignment and rasterization into the four
// height-map channels consumed by the surrogate model.
//
// Coordinates are meters in the scene frame: x grows east, y grows south,
// origin at the north-west corner of the square bounds [0, L] x [0, L].
#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <string>
#include <utility>
#include <variant>
#include <vector>

#include "urbanwind/grid.hpp"

namespace urbanwind {

class GeometryError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct Point {
  double x = 0.0;
  double y = 0.0;
  friend bool operator==(const Point&, const Point&) = default;
};

using Polygon = std::vector<Point>;

struct Disc {
  Point center;
  double radius = 0.0;
  friend bool operator==(const Disc&, const Disc&) = default;
};

/// Crossing-number test with the half-open edge rule, so a point on a shared
/// edge belongs to exactly one of two adjacent polygons.
inline bool contains(const Polygon& poly, Point p) {
  bool inside = false;
  const std::size_t n = poly.size();
  for (std::size_t i = 0, j = n - 1; i < n; j = i++) {
    const Point& a = poly[i];
    const Point& b = poly[j];
    if ((a.y > p.y) != (b.y > p.y)) {
      const double x_cross = (b.x - a.x) * (p.y - a.y) / (b.y - a.y) + a.x;
      if (p.x < x_cross) inside = !inside;
    }
  }
  return inside;
}

inline bool contains(const Disc& d, Point p) {
  const double dx = p.x - d.center.x;
  const double dy = p.y - d.center.y;
  return dx * dx + dy * dy <= d.radius * d.radius;
}

inline double signed_area(const Polygon& poly) {
  double a = 0.0;
  for (std::size_t i = 0, j = poly.size() - 1; i < poly.size(); j = i++) {
    a += poly[j].x * poly[i].y - poly[i].x * poly[j].y;
  }
  return 0.5 * a;
}

inline Point centroid(const Polygon& poly) {
  const double a = signed_area(poly);
  if (std::abs(a) < 1e-12) {
    Point m;
    for (const Point& p : poly) {
      m.x += p.x;
      m.y += p.y;
    }
    const auto n = static_cast<double>(std::max<std::size_t>(poly.size(), 1));
    return {m.x / n, m.y / n};
  }
  double cx = 0.0;
  double cy = 0.0;
  for (std::size_t i = 0, j = poly.size() - 1; i < poly.size(); j = i++) {
    const double cross = poly[j].x * poly[i].y - poly[i].x * poly[j].y;
    cx += (poly[j].x + poly[i].x) * cross;
    cy += (poly[j].y + poly[i].y) * cross;
  }
  return {cx / (6.0 * a), cy / (6.0 * a)};
}

namespace detail {

inline bool segments_cross(Point p1, Point p2, Point q1, Point q2) {
  auto orient = [](Point a, Point b, Point c) {
    const double v = (b.x - a.x) * (c.y - a.y) - (b.y - a.y) * (c.x - a.x);
    return (v > 0) - (v < 0);
  };
  const int o1 = orient(p1, p2, q1);
  const int o2 = orient(p1, p2, q2);
  const int o3 = orient(q1, q2, p1);
  const int o4 = orient(q1, q2, p2);
  return o1 * o2 < 0 && o3 * o4 < 0;
}

}  // namespace detail

/// True when no two non-adjacent edges properly cross.
inline bool is_simple(const Polygon& poly) {
  const std::size_t n = poly.size();
  if (n < 3) return false;
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i + 1; j < n; ++j) {
      if (j == i + 1 || (i == 0 && j == n - 1)) continue;
      if (detail::segments_cross(poly[i], poly[(i + 1) % n], poly[j], poly[(j + 1) % n])) return false;
    }
  }
  return true;
}

/// Sutherland-Hodgman clip against the axis-aligned square [0, side]^2.
inline Polygon clip_to_square(const Polygon& poly, double side) {
  Polygon out = poly;
  auto clip_edge = [&out](auto inside, auto intersect) {
    Polygon in = std::move(out);
    out.clear();
    if (in.empty()) return;
    Point prev = in.back();
    bool prev_in = inside(prev);
    for (const Point& cur : in) {
      const bool cur_in = inside(cur);
      if (cur_in) {
        if (!prev_in) out.push_back(intersect(prev, cur));
        out.push_back(cur);
      } else if (prev_in) {
        out.push_back(intersect(prev, cur));
      }
      prev = cur;
      prev_in = cur_in;
    }
  };
  auto at_x = [](double x) {
    return [x](Point a, Point b) { return Point{x, a.y + (b.y - a.y) * (x - a.x) / (b.x - a.x)}; };
  };
  auto at_y = [](double y) {
    return [y](Point a, Point b) { return Point{a.x + (b.x - a.x) * (y - a.y) / (b.y - a.y), y}; };
  };
  clip_edge([](Point p) { return p.x >= 0.0; }, at_x(0.0));
  clip_edge([side](Point p) { return p.x <= side; }, at_x(side));
  clip_edge([](Point p) { return p.y >= 0.0; }, at_y(0.0));
  clip_edge([side](Point p) { return p.y <= side; }, at_y(side));
  if (out.size() < 3) out.clear();
  return out;
}

// ---------------------------------------------------------------------------
// Scene model

struct Void {
  Polygon footprint;
  double z_low = 0.0;   // meters above building base
  double z_high = 0.0;
  friend bool operator==(const Void&, const Void&) = default;
};

struct Building {
  Polygon footprint;
  double base = 0.0;    // absolute elevation of the building floor
  double height = 0.0;  // meters above base
  std::vector<Void> voids;
  friend bool operator==(const Building&, const Building&) = default;
};

struct CanopyElement {
  std::variant<Polygon, Disc> footprint;
  double z_low = 0.0;   // meters above local terrain
  double z_high = 0.0;
  friend bool operator==(const CanopyElement&, const CanopyElement&) = default;
};

inline bool contains(const CanopyElement& c, Point p) {
  return std::visit([p](const auto& shape) { return contains(shape, p); }, c.footprint);
}

/// Terrain elevations sampled at cell centers of an n x n grid covering the
/// scene bounds. A 1 x 1 grid is a constant elevation.
struct Terrain {
  Grid2D<double> samples{1, 1, 0.0};

  static Terrain constant(double z) { return Terrain{Grid2D<double>(1, 1, z)}; }

  bool is_flat() const {
    const auto v = samples.values();
    return std::all_of(v.begin(), v.end(), [&](double z) { return z == v.front(); });
  }
  double min_elevation() const {
    const auto v = samples.values();
    return *std::min_element(v.begin(), v.end());
  }
  double max_elevation() const {
    const auto v = samples.values();
    return *std::max_element(v.begin(), v.end());
  }

  /// Bilinear interpolation between cell-centered samples, clamped at the edges.
  double at(Point p, double side) const {
    const int n = samples.rows();
    if (n == 1) return samples(0, 0);
    const double pitch = side / n;
    const double fx = std::clamp(p.x / pitch - 0.5, 0.0, static_cast<double>(n - 1));
    const double fy = std::clamp(p.y / pitch - 0.5, 0.0, static_cast<double>(n - 1));
    const int c0 = std::min(static_cast<int>(fx), n - 2);
    const int r0 = std::min(static_cast<int>(fy), n - 2);
    const double tx = fx - c0;
    const double ty = fy - r0;
    const double top = samples(r0, c0) * (1.0 - tx) + samples(r0, c0 + 1) * tx;
    const double bot = samples(r0 + 1, c0) * (1.0 - tx) + samples(r0 + 1, c0 + 1) * tx;
    return top * (1.0 - ty) + bot * ty;
  }

  /// Elevation at the center of cell (r, c) of an `cells` x `cells` raster.
  /// Matching resolutions read the sample directly.
  double at_cell(int r, int c, int cells, double side) const {
    if (samples.rows() == 1) return samples(0, 0);
    if (samples.rows() == cells) return samples(r, c);
    const double pitch = side / cells;
    return at({(c + 0.5) * pitch, (r + 0.5) * pitch}, side);
  }

  friend bool operator==(const Terrain&, const Terrain&) = default;
};

struct UrbanScene {
  std::string scene_id;
  double size = 512.0;  // side length L of the square bounds, meters
  Terrain terrain;
  std::vector<Building> buildings;
  std::vector<CanopyElement> trees;

  Point center() const { return {0.5 * size, 0.5 * size}; }
  friend bool operator==(const UrbanScene&, const UrbanScene&) = default;
};

/// Throws GeometryError describing the first violated invariant.
inline void validate(const UrbanScene& s) {
  if (!(s.size > 0.0) || !std::isfinite(s.size)) throw GeometryError("scene size must be positive");
  for (double z : s.terrain.samples.values()) {
    if (!std::isfinite(z)) throw GeometryError("terrain elevation is not finite");
  }
  if (s.terrain.samples.rows() != s.terrain.samples.cols() || s.terrain.samples.empty()) {
    throw GeometryError("terrain grid must be square and nonempty");
  }
  auto in_bounds = [&](Point p) {
    constexpr double slack = 1e-9;
    return p.x >= -slack && p.y >= -slack && p.x <= s.size + slack && p.y <= s.size + slack;
  };
  for (const Building& b : s.buildings) {
    if (!(b.height > 0.0)) throw GeometryError("building height must be positive");
    if (!std::isfinite(b.base)) throw GeometryError("building base is not finite");
    if (!is_simple(b.footprint)) throw GeometryError("building footprint is not a simple polygon");
    for (const Point& p : b.footprint) {
      if (!in_bounds(p)) throw GeometryError("building footprint leaves scene bounds");
    }
    for (const Void& v : b.voids) {
      if (!(v.z_low < v.z_high)) throw GeometryError("void requires z_low < z_high");
      if (v.z_low < 0.0 || v.z_high > b.height) throw GeometryError("void exceeds building vertical extent");
      if (v.footprint.size() < 3) throw GeometryError("void footprint needs at least three vertices");
    }
  }
  for (const CanopyElement& t : s.trees) {
    if (!(t.z_low < t.z_high)) throw GeometryError("canopy requires z_low < z_high");
    if (const auto* d = std::get_if<Disc>(&t.footprint)) {
      if (!(d->radius > 0.0)) throw GeometryError("canopy disc radius must be positive");
      if (!in_bounds(d->center)) throw GeometryError("tree position leaves scene bounds");
    } else {
      for (const Point& p : std::get<Polygon>(t.footprint)) {
        if (!in_bounds(p)) throw GeometryError("canopy footprint leaves scene bounds");
      }
    }
  }
}

// ---------------------------------------------------------------------------
// Wind alignment

struct Rotation {
  double cos = 1.0;
  double sin = 0.0;
  int quarter_turns = 0;  // valid when `diagonal` is false
  bool diagonal = false;
};

/// Rotation taking the flow vector of wind from `d` onto +x. Cardinal
/// directions use exact unit entries so cell centers map onto cell centers.
inline Rotation wind_rotation(Direction d) {
  constexpr double h = 0.70710678118654752440;
  switch (d) {
    case Direction::W: return {1.0, 0.0, 0, false};
    case Direction::S: return {0.0, 1.0, 1, false};
    case Direction::E: return {-1.0, 0.0, 2, false};
    case Direction::N: return {0.0, -1.0, 3, false};
    case Direction::SW: return {h, h, 0, true};
    case Direction::SE: return {-h, h, 0, true};
    case Direction::NE: return {-h, -h, 0, true};
    case Direction::NW: return {h, -h, 0, true};
  }
  return {};
}

inline Point rotate_about(Point p, Point c, const Rotation& r) {
  const double dx = p.x - c.x;
  const double dy = p.y - c.y;
  return {c.x + r.cos * dx - r.sin * dy, c.y + r.sin * dx + r.cos * dy};
}

inline Terrain rotate_terrain(const Terrain& t, const Rotation& rot, double side) {
  if (t.samples.rows() == 1) return t;
  if (!rot.diagonal) return Terrain{rotate_quarter_turns(t.samples, rot.quarter_turns)};
  // Terrain only exists as samples, so diagonal alignment has to resample it.
  const int n = t.samples.rows();
  const double pitch = side / n;
  const Point c{0.5 * side, 0.5 * side};
  const Rotation inverse{rot.cos, -rot.sin, 0, true};
  Terrain out{Grid2D<double>(n, n)};
  for (int r = 0; r < n; ++r) {
    for (int col = 0; col < n; ++col) {
      const Point src = rotate_about({(col + 0.5) * pitch, (r + 0.5) * pitch}, c, inverse);
      out.samples(r, col) = t.at(src, side);
    }
  }
  return out;
}

/// Rotates the scene about its center so wind from `d` blows along +x, then
/// clips geometry to the bounds. Wind from W is the identity.
inline UrbanScene align_to_wind(const UrbanScene& scene, Direction d) {
  const Rotation rot = wind_rotation(d);
  if (!rot.diagonal && rot.quarter_turns == 0) return scene;
  const Point c = scene.center();
  auto rotate_poly = [&](const Polygon& poly) {
    Polygon out;
    out.reserve(poly.size());
    for (const Point& p : poly) out.push_back(rotate_about(p, c, rot));
    return clip_to_square(out, scene.size);
  };

  UrbanScene out;
  out.scene_id = scene.scene_id;
  out.size = scene.size;
  out.terrain = rotate_terrain(scene.terrain, rot, scene.size);
  for (const Building& b : scene.buildings) {
    Building nb{rotate_poly(b.footprint), b.base, b.height, {}};
    if (nb.footprint.empty()) continue;
    for (const Void& v : b.voids) {
      Void nv{rotate_poly(v.footprint), v.z_low, v.z_high};
      if (!nv.footprint.empty()) nb.voids.push_back(std::move(nv));
    }
    out.buildings.push_back(std::move(nb));
  }
  for (const CanopyElement& t : scene.trees) {
    if (const auto* disc = std::get_if<Disc>(&t.footprint)) {
      const Point pc = rotate_about(disc->center, c, rot);
      if (pc.x < 0.0 || pc.y < 0.0 || pc.x > scene.size || pc.y > scene.size) continue;
      out.trees.push_back({Disc{pc, disc->radius}, t.z_low, t.z_high});
    } else {
      Polygon poly = rotate_poly(std::get<Polygon>(t.footprint));
      if (poly.empty()) continue;
      out.trees.push_back({std::move(poly), t.z_low, t.z_high});
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Encoding

enum Channel : int { kGlobal = 0, kSubtractive = 1, kTopography = 2, kAdditive = 3 };
inline constexpr int kInputChannels = 4;

struct EncodedInput {
  std::array<Grid2D<float>, kInputChannels> channels;
  double slice_height = 0.0;
  Direction direction = Direction::W;
  double meters_per_cell = 1.0;

  int rows() const { return channels[0].rows(); }
  int cols() const { return channels[0].cols(); }
  friend bool operator==(const EncodedInput&, const EncodedInput&) = default;
};

/// Column of solid material above one cell center.
struct ColumnQuery {
  double ground = 0.0;
  // Solid building intervals [lo, hi), voids already removed.
  std::vector<std::pair<double, double>> solids;
  // Void intervals [lo, hi) of buildings covering the point.
  std::vector<std::pair<double, double>> voids;
  // Canopy intervals [lo, hi) in absolute elevation.
  std::vector<std::pair<double, double>> canopies;
};

namespace detail {

inline std::vector<std::pair<double, double>> merge_intervals(std::vector<std::pair<double, double>> v) {
  std::sort(v.begin(), v.end());
  std::vector<std::pair<double, double>> out;
  for (const auto& iv : v) {
    if (!out.empty() && iv.first <= out.back().second) {
      out.back().second = std::max(out.back().second, iv.second);
    } else {
      out.push_back(iv);
    }
  }
  return out;
}

inline std::vector<std::pair<double, double>> subtract_intervals(
    std::pair<double, double> whole, const std::vector<std::pair<double, double>>& holes) {
  std::vector<std::pair<double, double>> out;
  double cursor = whole.first;
  for (const auto& h : holes) {
    if (h.second <= cursor || h.first >= whole.second) continue;
    if (h.first > cursor) out.emplace_back(cursor, h.first);
    cursor = std::max(cursor, h.second);
  }
  if (cursor < whole.second) out.emplace_back(cursor, whole.second);
  return out;
}

}  // namespace detail

inline ColumnQuery query_column(const UrbanScene& scene, Point p, double ground) {
  ColumnQuery q;
  q.ground = ground;
  for (const Building& b : scene.buildings) {
    if (!contains(b.footprint, p)) continue;
    std::vector<std::pair<double, double>> holes;
    for (const Void& v : b.voids) {
      if (contains(v.footprint, p)) holes.emplace_back(b.base + v.z_low, b.base + v.z_high);
    }
    holes = detail::merge_intervals(std::move(holes));
    for (const auto& s : detail::subtract_intervals({b.base, b.base + b.height}, holes)) q.solids.push_back(s);
    for (const auto& h : holes) q.voids.push_back(h);
  }
  for (const CanopyElement& t : scene.trees) {
    if (contains(t, p)) q.canopies.emplace_back(ground + t.z_low, ground + t.z_high);
  }
  return q;
}

struct CellEncoding {
  double global = 0.0;
  double subtractive = 0.0;
  double additive = 0.0;
  bool canopy_spans_probe = false;
};

/// Signed-distance encoding of one column relative to the probe elevation.
inline CellEncoding encode_column(const ColumnQuery& q, double probe) {
  CellEncoding e;
  bool inside = probe < q.ground;
  double top = q.ground;
  double below = probe >= q.ground ? q.ground : -std::numeric_limits<double>::infinity();
  for (const auto& [lo, hi] : q.solids) {
    if (lo <= probe && probe < hi) inside = true;
    top = std::max(top, hi);
    if (hi <= probe) below = std::max(below, hi);
  }
  e.global = inside ? top - probe : below - probe;

  if (!inside) {
    for (const auto& [lo, hi] : q.voids) {
      if (lo <= probe && probe < hi) e.subtractive = hi - probe;
    }
  }

  if (!q.canopies.empty()) {
    double canopy_top = -std::numeric_limits<double>::infinity();
    for (const auto& [lo, hi] : q.canopies) {
      canopy_top = std::max(canopy_top, hi);
      if (lo <= probe && probe < hi) e.canopy_spans_probe = true;
    }
    e.additive = canopy_top - probe;
  }
  // Grazing cells produce -0.0; store a plain zero.
  if (e.global == 0.0) e.global = 0.0;
  if (e.additive == 0.0) e.additive = 0.0;
  return e;
}

struct EncodeResult {
  EncodedInput input;
  BoolGrid canopy_blocking;  // canopy spans the probe plane
};

inline EncodeResult encode_with_canopy(const UrbanScene& scene, double slice_height, int cells,
                                       Direction direction = Direction::W) {
  if (!(slice_height > 0.0) || !std::isfinite(slice_height)) throw GeometryError("slice_height must be positive");
  if (cells <= 0) throw GeometryError("grid must have at least one cell");
  for (double z : scene.terrain.samples.values()) {
    if (!std::isfinite(z)) throw GeometryError("terrain elevation is not finite");
  }
  const double pitch = scene.size / cells;
  const double datum = scene.terrain.min_elevation();
  const double probe = datum + slice_height;

  EncodeResult res;
  EncodedInput& enc = res.input;
  for (auto& ch : enc.channels) ch = Grid2D<float>(cells, cells, 0.0f);
  res.canopy_blocking = BoolGrid(cells, cells, 0);
  enc.slice_height = slice_height;
  enc.direction = direction;
  enc.meters_per_cell = pitch;

  for (int r = 0; r < cells; ++r) {
    for (int c = 0; c < cells; ++c) {
      const Point p{(c + 0.5) * pitch, (r + 0.5) * pitch};
      const double ground = scene.terrain.at_cell(r, c, cells, scene.size);
      const CellEncoding e = encode_column(query_column(scene, p, ground), probe);
      enc.channels[kGlobal](r, c) = static_cast<float>(e.global);
      enc.channels[kSubtractive](r, c) = static_cast<float>(e.subtractive);
      enc.channels[kTopography](r, c) = static_cast<float>(ground - datum);
      enc.channels[kAdditive](r, c) = static_cast<float>(e.additive);
      res.canopy_blocking(r, c) = e.canopy_spans_probe ? 1 : 0;
    }
  }
  return res;
}

/// Rasterizes an already wind-aligned scene at the probe plane
/// z = min(terrain) + slice_height on a `cells` x `cells` grid.
inline EncodedInput encode(const UrbanScene& scene, double slice_height, int cells,
                           Direction direction = Direction::W) {
  return encode_with_canopy(scene, slice_height, cells, direction).input;
}

/// Cells where the probe plane is inside solid material; voids are open.
inline BoolGrid obstacle_mask(const EncodedInput& enc) {
  BoolGrid m(enc.rows(), enc.cols(), 0);
  const auto g = enc.channels[kGlobal].values();
  const auto s = enc.channels[kSubtractive].values();
  auto out = m.values();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = (g[i] > 0.0f && s[i] == 0.0f) ? 1 : 0;
  return m;
}

/// Standard slice heights: 1.5 m steps above the ground datum.
inline std::vector<double> standard_slice_heights(int count = 10) {
  std::vector<double> h;
  for (int k = 1; k <= count; ++k) h.push_back(1.5 * k);
  return h;
}

}  // namespace urbanwind
