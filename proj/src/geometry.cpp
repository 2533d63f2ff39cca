#include "canopy/geometry.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace canopy {

bool contains(const Polygon& poly, Point p) {
  bool inside = false;
  for (const auto& ring : poly.rings()) {
    for (std::size_t i = 0; i + 1 < ring.size(); ++i) {
      const Point& a = ring[i];
      const Point& b = ring[i + 1];
      if ((a.y > p.y) != (b.y > p.y)) {
        const double x = a.x + (p.y - a.y) * (b.x - a.x) / (b.y - a.y);
        if (p.x < x) inside = !inside;
      }
    }
  }
  return inside;
}

namespace {

double segment_distance_sq(Point p, Point a, Point b) {
  const double vx = b.x - a.x, vy = b.y - a.y;
  const double len_sq = vx * vx + vy * vy;
  double t = 0.0;
  if (len_sq > 0.0) t = std::clamp(((p.x - a.x) * vx + (p.y - a.y) * vy) / len_sq, 0.0, 1.0);
  const double dx = a.x + t * vx - p.x, dy = a.y + t * vy - p.y;
  return dx * dx + dy * dy;
}

template <typename Fn>
void scan_rows(const Polygon& poly, const GridMeta& grid, Fn&& on_span) {
  double ymin = std::numeric_limits<double>::infinity(), ymax = -ymin;
  for (const auto& p : poly.exterior()) {
    ymin = std::min(ymin, p.y);
    ymax = std::max(ymax, p.y);
  }
  // Rows whose centers may fall within [ymin, ymax].
  const int r0 = std::max(0, static_cast<int>(std::floor((grid.origin_y - ymax) / grid.pixel_size)));
  const int r1 = std::min(grid.height - 1,
                          static_cast<int>(std::ceil((grid.origin_y - ymin) / grid.pixel_size)));
  std::vector<double> xs;
  for (int r = r0; r <= r1; ++r) {
    const double y = grid.center_y(r);
    xs.clear();
    for (const auto& ring : poly.rings()) {
      for (std::size_t i = 0; i + 1 < ring.size(); ++i) {
        const Point& a = ring[i];
        const Point& b = ring[i + 1];
        if ((a.y > y) != (b.y > y)) xs.push_back(a.x + (y - a.y) * (b.x - a.x) / (b.y - a.y));
      }
    }
    std::sort(xs.begin(), xs.end());
    for (std::size_t k = 0; k + 1 < xs.size(); k += 2) {
      // Pixels with center in [xs[k], xs[k+1]).
      const double lo = (xs[k] - grid.origin_x) / grid.pixel_size - 0.5;
      const double hi = (xs[k + 1] - grid.origin_x) / grid.pixel_size - 0.5;
      const int c0 = std::max(0, static_cast<int>(std::ceil(lo)));
      const int c1 = std::min(grid.width, static_cast<int>(std::ceil(hi)));
      if (c1 > c0) on_span(r, c0, c1);
    }
  }
}

}  // namespace

bool intersects_disc(const Polygon& poly, Point center, double radius) {
  if (contains(poly, center)) return true;
  const double r2 = radius * radius;
  for (const auto& ring : poly.rings()) {
    for (std::size_t i = 0; i + 1 < ring.size(); ++i) {
      if (segment_distance_sq(center, ring[i], ring[i + 1]) <= r2) return true;
    }
  }
  return false;
}

void rasterize_into(const Polygon& poly, const GridMeta& grid, Mask& mask) {
  scan_rows(poly, grid, [&](int r, int c0, int c1) { mask.row(r).segment(c0, c1 - c0).setOnes(); });
}

Mask rasterize(const PolygonSet& polygons, const GridMeta& grid) {
  Mask m = Mask::Zero(grid.height, grid.width);
  for (const auto& p : polygons) rasterize_into(p, grid, m);
  return m;
}

std::vector<std::int64_t> covered_pixels(const Polygon& poly, const GridMeta& grid) {
  std::vector<std::int64_t> out;
  scan_rows(poly, grid, [&](int r, int c0, int c1) {
    for (int c = c0; c < c1; ++c) out.push_back(static_cast<std::int64_t>(r) * grid.width + c);
  });
  return out;
}

}  // namespace canopy
