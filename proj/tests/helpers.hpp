#pragma once

#include "canopy/raster.hpp"
#include "canopy/tv.hpp"

#include <filesystem>
#include <random>
#include <string>
#include <vector>

namespace testing {

inline canopy::GridMeta grid(int width, int height, double pixel = 1.5, double x0 = 600000.0,
                             double y0 = 6700000.0) {
  canopy::GridMeta g;
  g.origin_x = x0;
  g.origin_y = y0;
  g.pixel_size = pixel;
  g.width = width;
  g.height = height;
  g.crs = "EPSG:2154";
  return g;
}

inline canopy::ImageF random_heights(int rows, int cols, std::mt19937_64& rng, float lo = 0.0f,
                                     float hi = 40.0f) {
  std::uniform_real_distribution<float> u(lo, hi);
  return canopy::ImageF::NullaryExpr(rows, cols, [&]() { return u(rng); });
}

inline canopy::Volume<double> random_volume(int T, int H, int W, std::mt19937_64& rng) {
  std::normal_distribution<double> n(0.0, 1.0);
  canopy::Volume<double> v;
  for (int t = 0; t < T; ++t) v.push_back(canopy::ImageD::NullaryExpr(H, W, [&]() { return n(rng); }));
  return v;
}

inline canopy::HeightCube cube_from(const canopy::GridMeta& g, const std::vector<canopy::ImageF>& layers,
                                    int first_year = 2014) {
  std::vector<int> years;
  for (std::size_t t = 0; t < layers.size(); ++t) years.push_back(first_year + static_cast<int>(t));
  return canopy::HeightCube(g, years, layers);
}

/// Fresh empty directory under the system temp dir.
inline std::filesystem::path temp_dir(const std::string& name) {
  const auto p = std::filesystem::temp_directory_path() / ("canopy_test_" + name);
  std::filesystem::remove_all(p);
  std::filesystem::create_directories(p);
  return p;
}

}  // namespace testing
