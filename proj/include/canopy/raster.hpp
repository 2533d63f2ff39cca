#pragma once

#include <Eigen/Core>

#include <cstdint>
#include <filesystem>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace canopy {

/// Row-major dense image; row index is the grid row (north to south).
template <typename Scalar>
using Image = Eigen::Array<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

using ImageF = Image<float>;
using ImageD = Image<double>;
using Mask = Image<std::uint8_t>;

inline constexpr float kDefaultNodata = -9999.0f;
/// Heights above this are treated as corrupt and mapped to nodata on read.
inline constexpr float kMaxHeight = 100.0f;

/// Raised when an invariant of a raster-level type is violated.
class RasterError : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

struct GridMeta {
  double origin_x = 0.0;
  double origin_y = 0.0;
  double pixel_size = 1.0;
  int width = 1;
  int height = 1;
  std::string crs;
  float nodata = kDefaultNodata;

  void validate() const;

  /// Equal on every field except nodata.
  bool compatible(const GridMeta& other) const;

  double pixel_area() const { return pixel_size * pixel_size; }
  double center_x(int col) const { return origin_x + (col + 0.5) * pixel_size; }
  double center_y(int row) const { return origin_y - (row + 0.5) * pixel_size; }
  double corner_x(double col) const { return origin_x + col * pixel_size; }
  double corner_y(double row) const { return origin_y - row * pixel_size; }

  /// Sub-grid covering rows [row0, row0+rows) and cols [col0, col0+cols).
  GridMeta window(int col0, int row0, int cols, int rows) const;
};

void require_compatible(const GridMeta& a, const GridMeta& b, const char* what);

inline bool is_nodata(float v, float nodata) { return v == nodata; }

class HeightRaster {
public:
  HeightRaster() = default;
  /// Validates shape and value invariants; throws RasterError.
  HeightRaster(GridMeta meta, ImageF values);

  const GridMeta& meta() const { return meta_; }
  const ImageF& values() const { return values_; }
  float operator()(int row, int col) const { return values_(row, col); }
  bool valid(int row, int col) const { return values_(row, col) != meta_.nodata; }

  /// Nodata-aware validity mask (1 = value present).
  Mask valid_mask() const;

private:
  GridMeta meta_;
  ImageF values_;
};

class HeightCube {
public:
  HeightCube() = default;
  HeightCube(GridMeta meta, std::vector<int> years, std::vector<ImageF> layers);

  const GridMeta& meta() const { return meta_; }
  const std::vector<int>& years() const { return years_; }
  const std::vector<ImageF>& layers() const { return layers_; }
  const ImageF& layer(std::size_t t) const { return layers_.at(t); }
  std::size_t size() const { return layers_.size(); }
  std::optional<std::size_t> index_of_year(int year) const;

  HeightRaster slice(std::size_t t) const { return HeightRaster(meta_, layers_.at(t)); }

private:
  GridMeta meta_;
  std::vector<int> years_;
  std::vector<ImageF> layers_;
};

struct DisturbanceMask {
  GridMeta meta;
  int year = 0;
  Mask bits;

  DisturbanceMask() = default;
  DisturbanceMask(GridMeta m, int y, Mask b);
  std::int64_t count() const;
};

struct Point {
  double x = 0.0;
  double y = 0.0;
  bool operator==(const Point&) const = default;
};

using Ring = std::vector<Point>;

/// Signed shoelace area; positive for counter-clockwise rings in map coordinates.
double signed_ring_area(const Ring& ring);

class Polygon {
public:
  /// rings[0] is the exterior, the rest are holes. Validates closure and area.
  explicit Polygon(std::vector<Ring> rings, std::optional<int> year = std::nullopt,
                   std::string source_tag = {});

  const std::vector<Ring>& rings() const { return rings_; }
  const Ring& exterior() const { return rings_.front(); }
  std::optional<int> year() const { return year_; }
  double area_m2() const { return area_m2_; }
  const std::string& source_tag() const { return source_tag_; }

  void set_year(std::optional<int> y) { year_ = y; }

private:
  std::vector<Ring> rings_;
  std::optional<int> year_;
  double area_m2_ = 0.0;
  std::string source_tag_;
};

/// Axis-aligned rectangle polygon, counter-clockwise in map coordinates.
Polygon rectangle_polygon(double x0, double y0, double x1, double y1,
                          std::optional<int> year = std::nullopt, std::string tag = {});

using PolygonSet = std::vector<Polygon>;

HeightCube stack(const std::vector<HeightRaster>& rasters, const std::vector<int>& years);

// Raster file = <stem>.f32 (LE float32, row-major) + <stem>.hdr (key=value).
// `path` may name either file or the bare stem.
HeightRaster read_raster(const std::filesystem::path& path);
/// Returns the year key from the header, if present.
std::optional<int> read_raster_year(const std::filesystem::path& path);
void write_raster(const HeightRaster& r, const std::filesystem::path& path,
                  std::optional<int> year = std::nullopt);

// A cube directory holds one raster pair per layer named <year>.f32/<year>.hdr.
HeightCube read_cube(const std::filesystem::path& dir);
void write_cube(const HeightCube& cube, const std::filesystem::path& dir);

GridMeta read_grid(const std::filesystem::path& path);

}  // namespace canopy
