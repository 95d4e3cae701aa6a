#include <gtest/gtest.h>

#include <filesystem>

#include "urbanwind/dataset.hpp"
#include "urbanwind/scene_io.hpp"

using namespace urbanwind;

TEST(SceneIo, RoundTripIsValueIdentical) {
  for (const UrbanScene& s : synthetic_scenes(12, 4)) {
    const UrbanScene once = parse_scene(serialize_scene(s));
    EXPECT_EQ(once, s) << s.scene_id;
    EXPECT_EQ(parse_scene(serialize_scene(once)), once);
    EXPECT_EQ(serialize_scene(once), serialize_scene(s));
  }
}

TEST(SceneIo, MinimalDocumentDefaults) {
  const UrbanScene s = parse_scene(R"({"buildings": [{"footprint": [[10,10],[20,10],[20,20],[10,20]], "height": 12}]})");
  EXPECT_DOUBLE_EQ(s.size, 512.0);
  EXPECT_TRUE(s.terrain.is_flat());
  ASSERT_EQ(s.buildings.size(), 1u);
  EXPECT_DOUBLE_EQ(s.buildings[0].base, 0.0);
  EXPECT_TRUE(s.trees.empty());
}

TEST(SceneIo, BaseDefaultsToTerrainUnderCentroid) {
  const UrbanScene s = parse_scene(R"({"size": 64, "terrain": 5.5,
    "buildings": [{"footprint": [[10,10],[20,10],[20,20],[10,20]], "height": 12}]})");
  EXPECT_DOUBLE_EQ(s.buildings[0].base, 5.5);
}

TEST(SceneIo, GridTerrainAndTrees) {
  const UrbanScene s = parse_scene(R"({"size": 64,
    "terrain": {"cells": 2, "elevations": [0, 1, 2, 3]},
    "trees": [{"disc": {"center": [30, 30], "radius": 4}, "z_low": 2, "z_high": 8},
              {"footprint": [[1,1],[5,1],[5,5]], "z_low": 0.5, "z_high": 3}]})");
  EXPECT_DOUBLE_EQ(s.terrain.samples(1, 0), 2.0);
  ASSERT_EQ(s.trees.size(), 2u);
  EXPECT_TRUE(std::holds_alternative<Disc>(s.trees[0].footprint));
  EXPECT_TRUE(std::holds_alternative<Polygon>(s.trees[1].footprint));
}

TEST(SceneIo, MalformedDocumentsRejected) {
  EXPECT_THROW(parse_scene("{"), GeometryError);
  EXPECT_THROW(parse_scene("[]"), GeometryError);
  EXPECT_THROW(parse_scene(R"({"buildings": [{"footprint": [[0,0],[1,0]], "height": 3}]})"), GeometryError);
  EXPECT_THROW(parse_scene(R"({"buildings": [{"footprint": [[0,0],[1,0],[1,1]]}]})"), GeometryError);
  EXPECT_THROW(parse_scene(R"({"terrain": {"cells": 2, "elevations": [0, 1, 2]}})"), GeometryError);
  EXPECT_THROW(parse_scene(R"({"terrain": "flat"})"), GeometryError);
  EXPECT_THROW(parse_scene(R"({"trees": [{"disc": {"center": [1, 1], "radius": 2}, "z_low": 5, "z_high": 1}]})"),
               GeometryError);
}

TEST(SceneIo, FileRoundTrip) {
  const auto path = std::filesystem::temp_directory_path() / "urbanwind_scene_io_test.json";
  const UrbanScene s = synthetic_scene("file", ComplexityClass::LocalFeatures, 12);
  save_scene(s, path.string());
  EXPECT_EQ(load_scene(path.string()), s);
  std::filesystem::remove(path);
  EXPECT_THROW(load_scene(path.string()), GeometryError);
}
