// JSON scene documents. Schema is described in docs/formats.md.
#pragma once

#include <fstream>
#include <sstream>
#include <string>

#include <nlohmann/json.hpp>

#include "urbanwind/geometry.hpp"

namespace urbanwind {

namespace detail {

inline nlohmann::json polygon_to_json(const Polygon& poly) {
  nlohmann::json arr = nlohmann::json::array();
  for (const Point& p : poly) arr.push_back({p.x, p.y});
  return arr;
}

inline Polygon polygon_from_json(const nlohmann::json& j, const std::string& where) {
  if (!j.is_array() || j.size() < 3) throw GeometryError(where + ": polygon needs at least three [x, y] vertices");
  Polygon poly;
  for (const auto& v : j) {
    if (!v.is_array() || v.size() != 2 || !v[0].is_number() || !v[1].is_number()) {
      throw GeometryError(where + ": vertex must be [x, y]");
    }
    poly.push_back({v[0].get<double>(), v[1].get<double>()});
  }
  return poly;
}

inline double number_at(const nlohmann::json& j, const char* key, const std::string& where) {
  if (!j.contains(key) || !j.at(key).is_number()) throw GeometryError(where + ": missing numeric field '" + key + "'");
  return j.at(key).get<double>();
}

}  // namespace detail

inline nlohmann::json scene_to_json(const UrbanScene& s) {
  nlohmann::json j;
  j["scene_id"] = s.scene_id;
  j["size"] = s.size;
  if (s.terrain.samples.rows() == 1) {
    j["terrain"] = s.terrain.samples(0, 0);
  } else {
    const auto v = s.terrain.samples.values();
    j["terrain"] = {{"cells", s.terrain.samples.rows()}, {"elevations", std::vector<double>(v.begin(), v.end())}};
  }
  j["buildings"] = nlohmann::json::array();
  for (const Building& b : s.buildings) {
    nlohmann::json jb{{"footprint", detail::polygon_to_json(b.footprint)}, {"base", b.base}, {"height", b.height}};
    jb["voids"] = nlohmann::json::array();
    for (const Void& v : b.voids) {
      jb["voids"].push_back({{"footprint", detail::polygon_to_json(v.footprint)}, {"z_low", v.z_low}, {"z_high", v.z_high}});
    }
    j["buildings"].push_back(std::move(jb));
  }
  j["trees"] = nlohmann::json::array();
  for (const CanopyElement& t : s.trees) {
    nlohmann::json jt{{"z_low", t.z_low}, {"z_high", t.z_high}};
    if (const auto* d = std::get_if<Disc>(&t.footprint)) {
      jt["disc"] = {{"center", {d->center.x, d->center.y}}, {"radius", d->radius}};
    } else {
      jt["footprint"] = detail::polygon_to_json(std::get<Polygon>(t.footprint));
    }
    j["trees"].push_back(std::move(jt));
  }
  return j;
}

/// Parses and validates a scene document. A building without "base" sits on
/// the terrain elevation at its footprint centroid.
inline UrbanScene scene_from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw GeometryError("scene: document must be an object");
  UrbanScene s;
  s.scene_id = j.value("scene_id", std::string{});
  s.size = j.contains("size") ? detail::number_at(j, "size", "scene") : 512.0;
  if (j.contains("terrain")) {
    const auto& t = j.at("terrain");
    if (t.is_number()) {
      s.terrain = Terrain::constant(t.get<double>());
    } else if (t.is_object()) {
      const int n = t.value("cells", 0);
      const auto& e = t.at("elevations");
      if (n <= 0 || !e.is_array() || e.size() != static_cast<std::size_t>(n) * n) {
        throw GeometryError("terrain: 'elevations' must hold cells*cells values");
      }
      s.terrain.samples = Grid2D<double>(n, n);
      auto out = s.terrain.samples.values();
      for (std::size_t i = 0; i < out.size(); ++i) {
        if (!e[i].is_number()) throw GeometryError("terrain: elevation must be numeric");
        out[i] = e[i].get<double>();
      }
    } else {
      throw GeometryError("terrain: expected a number or {cells, elevations}");
    }
  }
  if (j.contains("buildings")) {
    int idx = 0;
    for (const auto& jb : j.at("buildings")) {
      const std::string where = "buildings[" + std::to_string(idx++) + "]";
      Building b;
      b.footprint = detail::polygon_from_json(jb.at("footprint"), where);
      b.height = detail::number_at(jb, "height", where);
      b.base = jb.contains("base") ? detail::number_at(jb, "base", where)
                                   : s.terrain.at(centroid(b.footprint), s.size);
      if (jb.contains("voids")) {
        for (const auto& jv : jb.at("voids")) {
          b.voids.push_back({detail::polygon_from_json(jv.at("footprint"), where + ".voids"),
                             detail::number_at(jv, "z_low", where), detail::number_at(jv, "z_high", where)});
        }
      }
      s.buildings.push_back(std::move(b));
    }
  }
  if (j.contains("trees")) {
    int idx = 0;
    for (const auto& jt : j.at("trees")) {
      const std::string where = "trees[" + std::to_string(idx++) + "]";
      CanopyElement t;
      t.z_low = detail::number_at(jt, "z_low", where);
      t.z_high = detail::number_at(jt, "z_high", where);
      if (jt.contains("disc")) {
        const auto& d = jt.at("disc");
        const auto& c = d.at("center");
        t.footprint = Disc{{c.at(0).get<double>(), c.at(1).get<double>()}, detail::number_at(d, "radius", where)};
      } else {
        t.footprint = detail::polygon_from_json(jt.at("footprint"), where);
      }
      s.trees.push_back(std::move(t));
    }
  }
  validate(s);
  return s;
}

inline UrbanScene parse_scene(const std::string& text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw GeometryError(std::string("scene: malformed document: ") + e.what());
  }
  try {
    return scene_from_json(j);
  } catch (const nlohmann::json::exception& e) {
    throw GeometryError(std::string("scene: ") + e.what());
  }
}

inline std::string serialize_scene(const UrbanScene& s) { return scene_to_json(s).dump(2); }

inline UrbanScene load_scene(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw GeometryError("cannot open scene file " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_scene(ss.str());
}

inline void save_scene(const UrbanScene& s, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw GeometryError("cannot write scene file " + path);
  out << serialize_scene(s) << '\n';
}

}  // namespace urbanwind
