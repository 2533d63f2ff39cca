#pragma once

#include "canopy/raster.hpp"

#include <cstdint>
#include <filesystem>
#include <random>
#include <stdexcept>
#include <vector>

namespace canopy {

class SynthError : public std::invalid_argument {
public:
  using std::invalid_argument::invalid_argument;
};

/// Integer pixel offset; +dx samples further east, +dy further south.
struct Offset {
  int dx = 0;
  int dy = 0;
  bool operator==(const Offset&) const = default;
};

struct DisturbanceEvent {
  enum class Shape { Rectangle, Disc };
  int year = 0;
  Shape shape = Shape::Rectangle;
  /// Rectangle: top-left pixel. Disc: center pixel.
  int col = 0;
  int row = 0;
  int width = 0;
  int height = 0;
  double radius = 0.0;
  double drop = 0.0;

  static DisturbanceEvent rect(int year, int col, int row, int width, int height, double drop) {
    return {year, Shape::Rectangle, col, row, width, height, 0.0, drop};
  }
  static DisturbanceEvent disc(int year, int col, int row, double radius, double drop) {
    return {year, Shape::Disc, col, row, 0, 0, radius, drop};
  }
};

struct SynthConfig {
  /// Drives the per-pixel noise only.
  std::uint64_t seed = 1;
  /// Drives the stand layout (sites, base heights, growth rates).
  std::uint64_t layout_seed = 7;
  int T = 11;
  int H = 128;
  int W = 128;
  int first_year = 2014;
  double pixel_size = 1.5;
  double origin_x = 0.0;
  double origin_y = 0.0;
  std::string crs = "EPSG:2154";
  int n_stands = 12;
  double base_min = 5.0;
  double base_max = 35.0;
  double growth_min = 0.2;
  double growth_max = 0.6;
  std::vector<DisturbanceEvent> events;
  double noise_sigma = 0.0;
  /// One offset per layer, or empty for no shifts.
  std::vector<Offset> shifts;
  // Rules used to derive the true polygons.
  double truth_threshold = 5.0;
  int truth_kernel = 3;
  double truth_min_area = 10.0;

  void validate() const;
  std::vector<int> years() const;
  GridMeta grid() const;
};

struct SynthTruth {
  HeightCube clean_cube;
  HeightCube noisy_cube;
  std::vector<Offset> true_offsets;
  /// Per-year truth pixel masks (index 0 is always empty).
  std::vector<Mask> true_masks;
  PolygonSet true_polygons;
};

/// 64-bit Mersenne twister (std::mt19937_64, fully specified by the C++
/// standard) with explicit double and Gaussian conversions, so fixtures are
/// reproducible across platforms and languages.
class PortableRng {
public:
  explicit PortableRng(std::uint64_t seed);
  /// Uniform in [0, 1): top 53 bits of one draw times 2^-53.
  double uniform();
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  /// Standard normal by Box-Muller from two uniforms (cosine branch only).
  double normal();

private:
  std::mt19937_64 engine_;
};

SynthTruth generate(const SynthConfig& cfg);

/// `count` rectangle and disc events (alternating) of at least 100 m^2 each,
/// placed 3 px away from the grid border, dated after the first layer.
std::vector<DisturbanceEvent> random_events(const SynthConfig& cfg, int count, std::uint64_t seed);

/// Uniform integer offsets in [-max_abs, max_abs]^2 for every layer except
/// `reference_index`, which stays at (0, 0).
std::vector<Offset> random_shifts(int T, int max_abs, std::uint64_t seed, int reference_index);

/// out(r, c) = in(r - dy, c - dx) with replicate-edge fill.
ImageF translate_replicate(const ImageF& in, Offset shift);

/// Writes noisy/, clean/ cube directories, true_offsets.csv and true_polygons.geojson.
void write_synth(const SynthTruth& truth, const std::filesystem::path& out_dir);

}  // namespace canopy
