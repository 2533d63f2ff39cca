#include "canopy/geojson.hpp"

#include <json.hpp>

#include <fstream>
#include <sstream>

namespace canopy {

using nlohmann::json;

namespace {

json ring_json(const Ring& r) {
  json arr = json::array();
  for (const auto& p : r) arr.push_back({p.x, p.y});
  return arr;
}

Ring ring_from_json(const json& j) {
  Ring r;
  for (const auto& p : j) r.push_back({p.at(0).get<double>(), p.at(1).get<double>()});
  return r;
}

}  // namespace

std::string to_geojson(const PolygonSet& polygons, const std::string& crs) {
  json fc;
  fc["type"] = "FeatureCollection";
  if (!crs.empty()) fc["crs"] = {{"type", "name"}, {"properties", {{"name", crs}}}};
  json features = json::array();
  for (const auto& poly : polygons) {
    json rings = json::array();
    for (const auto& r : poly.rings()) rings.push_back(ring_json(r));
    json props;
    props["area_m2"] = poly.area_m2();
    if (poly.year()) props["year"] = *poly.year();
    if (!poly.source_tag().empty()) props["source"] = poly.source_tag();
    features.push_back({{"type", "Feature"},
                        {"properties", props},
                        {"geometry", {{"type", "Polygon"}, {"coordinates", rings}}}});
  }
  fc["features"] = std::move(features);
  return fc.dump();
}

void write_geojson(const PolygonSet& polygons, const std::filesystem::path& path,
                   const std::string& crs) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw RasterError("cannot write " + path.string());
  out << to_geojson(polygons, crs) << "\n";
  if (!out) throw RasterError("failed writing " + path.string());
}

PolygonSet parse_geojson(const std::string& text, const std::string& source_tag) {
  json fc;
  try {
    fc = json::parse(text);
  } catch (const json::exception& e) {
    throw RasterError(std::string("geojson: ") + e.what());
  }
  if (fc.value("type", "") != "FeatureCollection") {
    throw RasterError("geojson: expected a FeatureCollection");
  }
  PolygonSet out;
  try {
    for (const auto& f : fc.at("features")) {
      const auto& geom = f.at("geometry");
      const auto& props = f.contains("properties") && f["properties"].is_object()
                              ? f["properties"]
                              : json::object();
      std::optional<int> year;
      if (props.contains("year") && props["year"].is_number()) year = props["year"].get<int>();
      std::string tag = props.contains("source") ? props["source"].get<std::string>() : source_tag;
      const std::string type = geom.at("type").get<std::string>();
      auto add = [&](const json& coords) {
        std::vector<Ring> rings;
        for (const auto& r : coords) rings.push_back(ring_from_json(r));
        out.emplace_back(std::move(rings), year, tag);
      };
      if (type == "Polygon") {
        add(geom.at("coordinates"));
      } else if (type == "MultiPolygon") {
        for (const auto& c : geom.at("coordinates")) add(c);
      } else {
        throw RasterError("geojson: unsupported geometry type " + type);
      }
    }
  } catch (const json::exception& e) {
    throw RasterError(std::string("geojson: ") + e.what());
  }
  return out;
}

PolygonSet read_geojson(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw RasterError("cannot open " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_geojson(ss.str(), path.stem().string());
}

}  // namespace canopy
