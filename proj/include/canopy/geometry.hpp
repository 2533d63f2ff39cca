#pragma once

#include "canopy/raster.hpp"

namespace canopy {

/// Even-odd rule over all rings (holes included).
bool contains(const Polygon& poly, Point p);

/// True when the polygon and the closed disc share any point.
bool intersects_disc(const Polygon& poly, Point center, double radius);

/// Sets every pixel of `mask` whose center lies inside `poly`.
void rasterize_into(const Polygon& poly, const GridMeta& grid, Mask& mask);

/// Pixel-center coverage of the union of `polygons` on `grid`.
Mask rasterize(const PolygonSet& polygons, const GridMeta& grid);

/// Pixel indices (row-major) covered by `poly`, in ascending order.
std::vector<std::int64_t> covered_pixels(const Polygon& poly, const GridMeta& grid);

}  // namespace canopy
