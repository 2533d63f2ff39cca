#pragma once

#include "canopy/raster.hpp"

#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace canopy {

class DeltaError : public std::invalid_argument {
public:
  using std::invalid_argument::invalid_argument;
};

struct DeltaConfig {
  double loss_threshold = 5.0;
  /// Side of the square structuring element used by the opening.
  int kernel = 3;
  double min_area_m2 = 10.0;
  /// Forest pixels (non-zero) on the cube grid; polygons keep only if >= 50% inside.
  std::optional<Mask> forest_mask;

  void validate() const;
};

struct LabeledRegions {
  GridMeta meta;
  /// 0 = background, regions numbered 1..n in order of first pixel (row-major).
  Image<std::int32_t> labels;
  /// pixel_counts[k] belongs to label k + 1.
  std::vector<std::int64_t> pixel_counts;

  std::size_t region_count() const { return pixel_counts.size(); }
};

/// Set where before - after >= threshold and both pixels hold data.
DisturbanceMask height_loss_mask(const HeightRaster& before, const HeightRaster& after,
                                 double threshold_m, int year = 0);

// Square k x k structuring element; out-of-grid pixels count as background.
Mask erode(const Mask& mask, int kernel);
Mask dilate(const Mask& mask, int kernel);
DisturbanceMask opening(const DisturbanceMask& mask, int kernel);

/// 8-connected components.
LabeledRegions label_regions(const DisturbanceMask& mask);

/// One polygon per region whose area (pixel count x pixel area) is >= min_area_m2.
/// Rings trace pixel edges; exterior counter-clockwise, holes clockwise.
PolygonSet polygonize(const LabeledRegions& regions, double min_area_m2,
                      std::optional<int> year = std::nullopt, const std::string& tag = "predicted");

/// Polygonizes only regions with keep[label - 1] set.
PolygonSet polygonize_selected(const LabeledRegions& regions, const std::vector<bool>& keep,
                               std::optional<int> year, const std::string& tag);

/// Disturbance polygons for one consecutive pair, stamped with `after_year`.
PolygonSet pair_to_polygons(const HeightRaster& before, const HeightRaster& after, int after_year,
                            const DeltaConfig& cfg);

/// Polygons for every consecutive pair of layers; pairs may run in parallel,
/// output order is by year then by region label.
PolygonSet cube_to_polygons(const HeightCube& cube, const DeltaConfig& cfg, int workers = 1);

}  // namespace canopy
