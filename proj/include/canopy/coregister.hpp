#pragma once

#include "canopy/raster.hpp"
#include "canopy/synth.hpp"

#include <filesystem>
#include <functional>
#include <stdexcept>
#include <vector>

namespace canopy {

class CoregError : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

struct OffsetSearchConfig {
  int window_radius = 2;
  /// Index of the reference layer; negative selects the middle layer (T / 2).
  int reference_index = -1;
  int patch_size = 2000;
  int patch_overlap = 64;

  void validate() const;
  std::size_t reference_for(std::size_t T) const;
};

struct OffsetScore {
  Offset offset;
  double score = 0.0;  // mean squared difference over the valid overlap
  std::int64_t valid_pixels = 0;
};

struct PatchOffset {
  int year = 0;
  int x0 = 0, y0 = 0, width = 0, height = 0;
  Offset offset;
  double score = 0.0;
};

using OffsetField = std::vector<PatchOffset>;

/// Mean squared difference between moving(r + dy, c + dx) and reference(r, c)
/// over pixels where both samples exist and hold data. Returns no value when
/// the overlap is empty.
std::optional<OffsetScore> shifted_msd(const HeightRaster& moving, const HeightRaster& reference,
                                       Offset offset);

/// Exhaustive search of [-r, r]^2; ties go to the smaller |dx| + |dy|, then
/// to row-major scan order (dy outer, dx inner).
OffsetScore best_offset(const HeightRaster& moving, const HeightRaster& reference, int window_radius);

/// Patch origins along one axis of length `extent`: stride patch_size - overlap,
/// last patch flush with the far edge.
std::vector<int> patch_starts(int extent, int patch_size, int overlap);

struct CoregResult {
  HeightCube cube;
  OffsetField offsets;
};

/// Per-patch offsets against the reference layer; registered patches are
/// averaged where they overlap and pixels left uncovered become nodata.
/// `on_layer(year, seconds)` is called after each non-reference layer.
CoregResult coregister_cube(const HeightCube& cube, const OffsetSearchConfig& cfg, int workers = 1,
                            const std::function<void(int, double)>& on_layer = {});

/// CSV with header year,patch_x0,patch_y0,dx,dy,score.
void write_offsets_csv(const OffsetField& field, const std::filesystem::path& path);

}  // namespace canopy
