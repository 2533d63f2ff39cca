#pragma once

#include "canopy/raster.hpp"

#include <filesystem>
#include <string>

namespace canopy {

/// FeatureCollection with `year` (int, omitted when unset) and `area_m2` properties.
std::string to_geojson(const PolygonSet& polygons, const std::string& crs = {});
void write_geojson(const PolygonSet& polygons, const std::filesystem::path& path,
                   const std::string& crs = {});

/// Accepts Polygon and MultiPolygon features; areas are recomputed from geometry.
PolygonSet parse_geojson(const std::string& text, const std::string& source_tag = {});
PolygonSet read_geojson(const std::filesystem::path& path);

}  // namespace canopy
