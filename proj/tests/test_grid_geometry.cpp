#include <gtest/gtest.h>

#include <cmath>
#include <limits>

#include "urbanwind/dataset.hpp"
#include "urbanwind/geometry.hpp"

using namespace urbanwind;

namespace {

Polygon box(double x0, double y0, double x1, double y1) { return {{x0, y0}, {x1, y0}, {x1, y1}, {x0, y1}}; }

// Flat 64 m scene on a 1 m raster; edges sit between cell centers.
UrbanScene one_building(double height = 30.0) {
  UrbanScene s;
  s.scene_id = "fixture";
  s.size = 64.0;
  s.buildings.push_back({box(20, 24, 40, 40), 0.0, height, {}});
  return s;
}

// Plain even-odd test, kept separate from the library's containment.
bool inside_polygon(const Polygon& poly, Point p) {
  bool in = false;
  for (std::size_t i = 0, j = poly.size() - 1; i < poly.size(); j = i++) {
    const Point a = poly[i];
    const Point b = poly[j];
    if ((a.y > p.y) != (b.y > p.y) && p.x < (b.x - a.x) * (p.y - a.y) / (b.y - a.y) + a.x) in = !in;
  }
  return in;
}

bool inside_shape(const CanopyElement& t, Point p) {
  if (const auto* d = std::get_if<Disc>(&t.footprint)) {
    return std::hypot(p.x - d->center.x, p.y - d->center.y) <= d->radius;
  }
  return inside_polygon(std::get<Polygon>(t.footprint), p);
}

struct OracleCell {
  double global;
  double subtractive;
  double additive;
};

// Scalar column oracle: probes a solid(z) predicate at every candidate surface.
OracleCell oracle_cell(const UrbanScene& s, Point p, double ground, double probe) {
  constexpr double eps = 1e-7;
  auto in_void = [&](const Building& b, double z) {
    for (const Void& v : b.voids) {
      if (inside_polygon(v.footprint, p) && z >= b.base + v.z_low && z < b.base + v.z_high) return true;
    }
    return false;
  };
  auto solid = [&](double z) {
    if (z < ground) return true;
    for (const Building& b : s.buildings) {
      if (inside_polygon(b.footprint, p) && z >= b.base && z < b.base + b.height && !in_void(b, z)) return true;
    }
    return false;
  };
  std::vector<double> surfaces{ground};
  for (const Building& b : s.buildings) {
    if (!inside_polygon(b.footprint, p)) continue;
    surfaces.push_back(b.base + b.height);
    for (const Void& v : b.voids) surfaces.push_back(b.base + v.z_low);
  }
  OracleCell out{0.0, 0.0, 0.0};
  double top = -1e300;
  double below = -1e300;
  for (double e : surfaces) {
    if (!solid(e - eps) || solid(e + eps)) continue;
    top = std::max(top, e);
    if (e <= probe) below = std::max(below, e);
  }
  out.global = solid(probe) ? top - probe : below - probe;
  if (!solid(probe)) {
    for (const Building& b : s.buildings) {
      if (!inside_polygon(b.footprint, p)) continue;
      for (const Void& v : b.voids) {
        if (inside_polygon(v.footprint, p) && probe >= b.base + v.z_low && probe < b.base + v.z_high) {
          out.subtractive = b.base + v.z_high - probe;
        }
      }
    }
  }
  bool any_tree = false;
  double canopy_top = -1e300;
  for (const CanopyElement& t : s.trees) {
    if (!inside_shape(t, p)) continue;
    any_tree = true;
    canopy_top = std::max(canopy_top, ground + t.z_high);
  }
  if (any_tree) out.additive = canopy_top - probe;
  return out;
}

void expect_matches_oracle(const UrbanScene& s, double slice, int cells) {
  const EncodedInput enc = encode(s, slice, cells);
  const double pitch = s.size / cells;
  const double datum = s.terrain.min_elevation();
  int checked = 0;
  for (int r = 0; r < cells; ++r) {
    for (int c = 0; c < cells; ++c) {
      const Point p{(c + 0.5) * pitch, (r + 0.5) * pitch};
      const double ground = s.terrain.at_cell(r, c, cells, s.size);
      const OracleCell o = oracle_cell(s, p, ground, datum + slice);
      const double tol = 1e-4 * (1.0 + std::abs(o.global));
      ASSERT_NEAR(enc.channels[kGlobal](r, c), o.global, tol) << s.scene_id << " r=" << r << " c=" << c;
      ASSERT_NEAR(enc.channels[kSubtractive](r, c), o.subtractive, 1e-4) << s.scene_id << " r=" << r << " c=" << c;
      ASSERT_NEAR(enc.channels[kAdditive](r, c), o.additive, 1e-4) << s.scene_id << " r=" << r << " c=" << c;
      ASSERT_NEAR(enc.channels[kTopography](r, c), ground - datum, 1e-4);
      ++checked;
    }
  }
  EXPECT_EQ(checked, cells * cells);
}

std::vector<UrbanScene> random_scenes(int count, std::uint64_t seed) { return synthetic_scenes(count, seed); }

}  // namespace

TEST(Grid, IndexingAndBounds) {
  Grid2D<int> g(2, 3, 7);
  EXPECT_EQ(g.size(), 6u);
  g(1, 2) = 4;
  EXPECT_EQ(g.values()[5], 4);
  EXPECT_THROW(Grid2D<int>(-1, 2), std::invalid_argument);
}

TEST(Grid, QuarterTurnsCompose) {
  Grid2D<int> g(3, 3);
  for (int i = 0; i < 9; ++i) g.values()[static_cast<std::size_t>(i)] = i;
  EXPECT_EQ(rotate_quarter_turns(g, 4), g);
  EXPECT_EQ(rotate_quarter_turns(rotate_quarter_turns(g, 1), 3), g);
  EXPECT_EQ(rotate_quarter_turns(g, -1), rotate_quarter_turns(g, 3));
  // One turn: the top-left corner ends up top-right.
  EXPECT_EQ(rotate_quarter_turns(g, 1)(0, 2), g(0, 0));
}

TEST(Direction, ParseRoundTrip) {
  for (Direction d : kAllDirections) EXPECT_EQ(parse_direction(to_string(d)), d);
  EXPECT_FALSE(parse_direction("north").has_value());
}

TEST(Polygon, AreaCentroidAndContainment) {
  const Polygon sq = box(0, 0, 4, 2);
  EXPECT_DOUBLE_EQ(std::abs(signed_area(sq)), 8.0);
  EXPECT_EQ(centroid(sq), (Point{2, 1}));
  EXPECT_TRUE(contains(sq, {1, 1}));
  EXPECT_FALSE(contains(sq, {5, 1}));
  // Shared edge: a point belongs to exactly one of two adjacent boxes.
  const Polygon right = box(4, 0, 8, 2);
  EXPECT_NE(contains(sq, {4, 1}), contains(right, {4, 1}));
}

TEST(Polygon, SelfIntersectionRejected) {
  const Polygon bow{{0, 0}, {4, 4}, {4, 0}, {0, 4}};
  EXPECT_FALSE(is_simple(bow));
  EXPECT_TRUE(is_simple(box(0, 0, 1, 1)));
}

TEST(Polygon, ClipToSquare) {
  const Polygon clipped = clip_to_square(box(-10, 10, 20, 30), 64.0);
  EXPECT_NEAR(std::abs(signed_area(clipped)), 20.0 * 20.0, 1e-9);
  EXPECT_TRUE(clip_to_square(box(100, 100, 120, 120), 64.0).empty());
}

TEST(Scene, ValidationErrors) {
  UrbanScene s = one_building();
  EXPECT_NO_THROW(validate(s));
  s.buildings[0].height = 0.0;
  EXPECT_THROW(validate(s), GeometryError);
  s = one_building();
  s.buildings[0].footprint = box(50, 50, 70, 60);
  EXPECT_THROW(validate(s), GeometryError);
  s = one_building();
  s.buildings[0].voids.push_back({box(20, 24, 30, 40), 5.0, 31.0});
  EXPECT_THROW(validate(s), GeometryError);
  s = one_building();
  s.trees.push_back({Disc{{10, 10}, 3}, 8.0, 2.0});
  EXPECT_THROW(validate(s), GeometryError);
  s = one_building();
  s.terrain.samples(0, 0) = std::numeric_limits<double>::quiet_NaN();
  EXPECT_THROW(validate(s), GeometryError);
}

TEST(Terrain, BilinearBetweenSamples) {
  Terrain t{Grid2D<double>(2, 2, 0.0)};
  t.samples(0, 1) = 4.0;
  t.samples(1, 1) = 4.0;
  // Samples sit at x = 16 and 48 on a 64 m side.
  EXPECT_DOUBLE_EQ(t.at({32, 20}, 64.0), 2.0);
  EXPECT_DOUBLE_EQ(t.at({0, 0}, 64.0), 0.0);
  EXPECT_DOUBLE_EQ(t.at({64, 64}, 64.0), 4.0);
}

TEST(AlignToWind, WestIsIdentity) {
  const UrbanScene s = random_scenes(1, 3).front();
  EXPECT_EQ(align_to_wind(s, Direction::W), s);
}

TEST(AlignToWind, EastTurnsCenteredBuildingAboutItsCenter) {
  UrbanScene s;
  s.size = 512;
  s.buildings.push_back({box(236, 226, 276, 286), 0.0, 20.0, {}});
  const UrbanScene e = align_to_wind(s, Direction::E);
  ASSERT_EQ(e.buildings.size(), 1u);
  const Point c = centroid(e.buildings[0].footprint);
  EXPECT_NEAR(c.x, 256.0, 1e-9);
  EXPECT_NEAR(c.y, 256.0, 1e-9);
  // 180 degrees: vertex (236, 226) goes to (276, 286).
  EXPECT_NEAR(e.buildings[0].footprint[0].x, 276.0, 1e-9);
  EXPECT_NEAR(e.buildings[0].footprint[0].y, 286.0, 1e-9);
  EXPECT_NEAR(std::abs(signed_area(e.buildings[0].footprint)), 40.0 * 60.0, 1e-9);
}

TEST(AlignToWind, SouthMapsEastOffsetToSouthOffset) {
  UrbanScene s;
  s.size = 512;
  s.buildings.push_back({box(355.5, 255.5, 356.5, 256.5), 0.0, 10.0, {}});
  const UrbanScene r = align_to_wind(s, Direction::S);
  const Point c = centroid(r.buildings.at(0).footprint);
  EXPECT_NEAR(c.x - 256.0, 0.0, 1e-9);
  EXPECT_NEAR(c.y - 256.0, 100.0, 1e-9);
}

TEST(AlignToWind, DiagonalKeepsShapeAndClipsCorners) {
  UrbanScene s;
  s.size = 512;
  s.buildings.push_back({box(236, 236, 276, 276), 0.0, 20.0, {}});
  s.buildings.push_back({box(0, 0, 30, 30), 0.0, 20.0, {}});
  const UrbanScene r = align_to_wind(s, Direction::NE);
  ASSERT_EQ(r.buildings.size(), 1u);
  EXPECT_NEAR(std::abs(signed_area(r.buildings[0].footprint)), 1600.0, 1e-6);
}

TEST(Encode, FlatBuildingFixture) {
  const EncodedInput enc = encode(one_building(), 1.5, 64);
  const BoolGrid mask = obstacle_mask(enc);
  for (int r = 0; r < 64; ++r) {
    for (int c = 0; c < 64; ++c) {
      const bool in = c >= 20 && c < 40 && r >= 24 && r < 40;
      EXPECT_FLOAT_EQ(enc.channels[kGlobal](r, c), in ? 28.5f : -1.5f);
      EXPECT_FLOAT_EQ(enc.channels[kTopography](r, c), 0.0f);
      EXPECT_FLOAT_EQ(enc.channels[kSubtractive](r, c), 0.0f);
      EXPECT_FLOAT_EQ(enc.channels[kAdditive](r, c), 0.0f);
      EXPECT_EQ(mask(r, c), in ? 1 : 0);
    }
  }
  EXPECT_DOUBLE_EQ(enc.meters_per_cell, 1.0);
}

TEST(Encode, ArcadeFixture) {
  UrbanScene s = one_building();
  const Polygon arcade = box(20, 30, 40, 34);
  s.buildings[0].voids.push_back({arcade, 0.0, 4.0});
  const EncodedInput enc = encode(s, 1.5, 64);
  const BoolGrid mask = obstacle_mask(enc);
  int arcade_cells = 0;
  for (int r = 0; r < 64; ++r) {
    for (int c = 0; c < 64; ++c) {
      const Point p{c + 0.5, r + 0.5};
      const bool in_building = inside_polygon(s.buildings[0].footprint, p);
      const bool in_arcade = inside_polygon(arcade, p);
      EXPECT_FLOAT_EQ(enc.channels[kSubtractive](r, c), in_arcade ? 2.5f : 0.0f);
      EXPECT_EQ(mask(r, c), (in_building && !in_arcade) ? 1 : 0);
      arcade_cells += in_arcade;
    }
  }
  EXPECT_EQ(arcade_cells, 20 * 4);
}

TEST(Encode, TreeCanopyFixture) {
  UrbanScene s;
  s.size = 64;
  s.trees.push_back({box(8, 8, 16, 16), 2.0, 8.0});
  const EncodeResult res = encode_with_canopy(s, 1.5, 64);
  for (int r = 0; r < 64; ++r) {
    for (int c = 0; c < 64; ++c) {
      const Point p{c + 0.5, r + 0.5};
      const OracleCell o = oracle_cell(s, p, 0.0, 1.5);
      const bool in = inside_polygon(std::get<Polygon>(s.trees[0].footprint), p);
      EXPECT_FLOAT_EQ(res.input.channels[kAdditive](r, c), in ? 6.5f : 0.0f);
      EXPECT_FLOAT_EQ(res.input.channels[kGlobal](r, c), -1.5f);
      EXPECT_DOUBLE_EQ(o.additive, in ? 6.5 : 0.0);
      EXPECT_DOUBLE_EQ(o.global, -1.5);
      EXPECT_EQ(res.canopy_blocking(r, c), 0);
    }
  }
  // Raising the probe into the canopy marks it as blocking.
  const EncodeResult high = encode_with_canopy(s, 4.0, 64);
  EXPECT_EQ(high.canopy_blocking(10, 10), 1);
  EXPECT_FLOAT_EQ(high.input.channels[kAdditive](10, 10), 4.0f);
}

TEST(Encode, ObstacleMaskOfEmptySceneIsClear) {
  UrbanScene s;
  s.size = 64;
  const BoolGrid m = obstacle_mask(encode(s, 1.5, 32));
  for (auto v : m.values()) EXPECT_EQ(v, 0);
}

TEST(Encode, TerrainChannelIsHeightAboveLowestGround) {
  UrbanScene s;
  s.size = 64;
  s.terrain.samples = Grid2D<double>(4, 4, 10.0);
  s.terrain.samples(3, 3) = 7.0;
  const EncodedInput enc = encode(s, 1.5, 4);
  EXPECT_FLOAT_EQ(enc.channels[kTopography](3, 3), 0.0f);
  EXPECT_FLOAT_EQ(enc.channels[kTopography](0, 0), 3.0f);
  // Probe at 8.5 is below the 10 m ground: inside solid terrain.
  EXPECT_FLOAT_EQ(enc.channels[kGlobal](0, 0), 1.5f);
  EXPECT_FLOAT_EQ(enc.channels[kGlobal](3, 3), -1.5f);
}

TEST(Encode, InvalidArguments) {
  EXPECT_THROW(encode(one_building(), 0.0, 64), GeometryError);
  EXPECT_THROW(encode(one_building(), 1.5, 0), GeometryError);
}

TEST(Encode, MatchesScalarOracleOnRandomScenes) {
  for (const UrbanScene& s : random_scenes(8, 21)) {
    for (double slice : {1.5, 6.0}) expect_matches_oracle(s, slice, 64);
  }
}

TEST(EncodeProperty, RotationCommutesWithQuarterTurns) {
  for (const UrbanScene& s : random_scenes(20, 99)) {
    const EncodedInput base = encode(s, 1.5, 64);
    for (Direction d : {Direction::N, Direction::E, Direction::S, Direction::W}) {
      const int k = wind_rotation(d).quarter_turns;
      const EncodedInput rotated = encode(align_to_wind(s, d), 1.5, 64, d);
      for (int ch = 0; ch < kInputChannels; ++ch) {
        ASSERT_EQ(rotated.channels[ch], rotate_quarter_turns(base.channels[ch], k))
            << s.scene_id << " direction " << to_string(d) << " channel " << ch;
      }
    }
  }
}

TEST(EncodeProperty, SignPartition) {
  for (const UrbanScene& s : random_scenes(12, 5)) {
    for (Direction d : kAllDirections) {
      const UrbanScene a = align_to_wind(s, d);
      const EncodedInput enc = encode(a, 1.5, 64);
      for (int r = 0; r < 64; ++r) {
        for (int c = 0; c < 64; ++c) {
          const float g = enc.channels[kGlobal](r, c);
          ASSERT_EQ((g > 0) + (g < 0) + (g == 0), 1);
          ASSERT_GE(enc.channels[kTopography](r, c), 0.0f);
          ASSERT_GE(enc.channels[kSubtractive](r, c), 0.0f);
          if (enc.channels[kSubtractive](r, c) > 0) {
            const Point p{(c + 0.5) * 8.0, (r + 0.5) * 8.0};
            bool covered = false;
            for (const Building& b : a.buildings) covered |= contains(b.footprint, p);
            ASSERT_TRUE(covered);
          }
          if (enc.channels[kAdditive](r, c) != 0) {
            const Point p{(c + 0.5) * 8.0, (r + 0.5) * 8.0};
            bool covered = false;
            for (const CanopyElement& t : a.trees) covered |= contains(t, p);
            ASSERT_TRUE(covered);
          }
        }
      }
    }
  }
}

TEST(EncodeProperty, SliceAboveEverythingClearsMask) {
  for (const UrbanScene& s : random_scenes(8, 17)) {
    double tallest = s.terrain.max_elevation();
    for (const Building& b : s.buildings) tallest = std::max(tallest, b.base + b.height);
    const double slice = tallest - s.terrain.min_elevation() + 0.5;
    const EncodedInput enc = encode(s, slice, 64);
    const BoolGrid mask = obstacle_mask(enc);
    for (auto v : mask.values()) ASSERT_EQ(v, 0);
    for (float g : enc.channels[kGlobal].values()) ASSERT_LT(g, 0.0f);
  }
}

TEST(EncodeProperty, Deterministic) {
  for (const UrbanScene& s : random_scenes(4, 8)) {
    for (Direction d : kAllDirections) {
      const UrbanScene a = align_to_wind(s, d);
      EXPECT_EQ(encode(a, 3.0, 64, d), encode(align_to_wind(s, d), 3.0, 64, d));
    }
  }
}

TEST(EncodeProperty, StandardSlices) {
  const auto h = standard_slice_heights();
  ASSERT_EQ(h.size(), 10u);
  EXPECT_DOUBLE_EQ(h.front(), 1.5);
  EXPECT_DOUBLE_EQ(h.back(), 15.0);
}
