#include "canopy/raster.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iomanip>
#include <map>
#include <sstream>

namespace canopy {

namespace fs = std::filesystem;

void GridMeta::validate() const {
  if (!(pixel_size > 0.0) || !std::isfinite(pixel_size)) {
    throw RasterError("grid: pixel_size must be > 0");
  }
  if (width < 1 || height < 1) {
    throw RasterError("grid: width and height must be >= 1");
  }
  if (!std::isfinite(origin_x) || !std::isfinite(origin_y)) {
    throw RasterError("grid: origin must be finite");
  }
}

bool GridMeta::compatible(const GridMeta& o) const {
  return origin_x == o.origin_x && origin_y == o.origin_y && pixel_size == o.pixel_size &&
         width == o.width && height == o.height && crs == o.crs;
}

GridMeta GridMeta::window(int col0, int row0, int cols, int rows) const {
  GridMeta m = *this;
  m.origin_x = corner_x(col0);
  m.origin_y = corner_y(row0);
  m.width = cols;
  m.height = rows;
  return m;
}

void require_compatible(const GridMeta& a, const GridMeta& b, const char* what) {
  if (!a.compatible(b)) {
    throw RasterError(std::string(what) + ": incompatible grids");
  }
}

namespace {

void check_heights(const ImageF& v, float nodata) {
  for (Eigen::Index i = 0; i < v.size(); ++i) {
    const float x = v.data()[i];
    if (x == nodata) continue;
    if (!std::isfinite(x) || x < 0.0f) {
      throw RasterError("raster: height values must be finite and >= 0");
    }
  }
}

}  // namespace

HeightRaster::HeightRaster(GridMeta meta, ImageF values)
    : meta_(std::move(meta)), values_(std::move(values)) {
  meta_.validate();
  if (values_.rows() != meta_.height || values_.cols() != meta_.width) {
    throw RasterError("raster: values shape does not match grid");
  }
  check_heights(values_, meta_.nodata);
}

Mask HeightRaster::valid_mask() const { return (values_ != meta_.nodata).cast<std::uint8_t>(); }

HeightCube::HeightCube(GridMeta meta, std::vector<int> years, std::vector<ImageF> layers)
    : meta_(std::move(meta)), years_(std::move(years)), layers_(std::move(layers)) {
  meta_.validate();
  if (years_.empty()) throw RasterError("cube: needs at least one layer");
  if (years_.size() != layers_.size()) throw RasterError("cube: years and layers differ in length");
  if (!std::is_sorted(years_.begin(), years_.end(), std::less_equal<>())) {
    throw RasterError("cube: years must be strictly increasing");
  }
  for (const auto& l : layers_) {
    if (l.rows() != meta_.height || l.cols() != meta_.width) {
      throw RasterError("cube: layer shape does not match grid");
    }
    check_heights(l, meta_.nodata);
  }
}

std::optional<std::size_t> HeightCube::index_of_year(int year) const {
  auto it = std::find(years_.begin(), years_.end(), year);
  if (it == years_.end()) return std::nullopt;
  return static_cast<std::size_t>(it - years_.begin());
}

DisturbanceMask::DisturbanceMask(GridMeta m, int y, Mask b)
    : meta(std::move(m)), year(y), bits(std::move(b)) {
  if (bits.rows() != meta.height || bits.cols() != meta.width) {
    throw RasterError("mask: bits shape does not match grid");
  }
}

std::int64_t DisturbanceMask::count() const { return (bits != 0).count(); }

double signed_ring_area(const Ring& ring) {
  if (ring.empty()) return 0.0;
  // Relative to the first vertex to avoid cancellation at large map coordinates.
  const double ox = ring.front().x, oy = ring.front().y;
  double acc = 0.0;
  for (std::size_t i = 0; i + 1 < ring.size(); ++i) {
    acc += (ring[i].x - ox) * (ring[i + 1].y - oy) - (ring[i + 1].x - ox) * (ring[i].y - oy);
  }
  return 0.5 * acc;
}

Polygon::Polygon(std::vector<Ring> rings, std::optional<int> year, std::string source_tag)
    : rings_(std::move(rings)), year_(year), source_tag_(std::move(source_tag)) {
  if (rings_.empty()) throw RasterError("polygon: no rings");
  for (const auto& r : rings_) {
    if (r.size() < 4) throw RasterError("polygon: ring needs >= 4 vertices");
    if (!(r.front() == r.back())) throw RasterError("polygon: ring not closed");
  }
  area_m2_ = std::abs(signed_ring_area(rings_.front()));
  for (std::size_t i = 1; i < rings_.size(); ++i) area_m2_ -= std::abs(signed_ring_area(rings_[i]));
  if (!(area_m2_ > 0.0)) throw RasterError("polygon: area must be > 0");
}

Polygon rectangle_polygon(double x0, double y0, double x1, double y1, std::optional<int> year,
                          std::string tag) {
  const double lx = std::min(x0, x1), hx = std::max(x0, x1);
  const double ly = std::min(y0, y1), hy = std::max(y0, y1);
  Ring r{{lx, ly}, {hx, ly}, {hx, hy}, {lx, hy}, {lx, ly}};
  return Polygon({std::move(r)}, year, std::move(tag));
}

HeightCube stack(const std::vector<HeightRaster>& rasters, const std::vector<int>& years) {
  if (rasters.size() != years.size()) throw RasterError("stack: rasters and years differ in length");
  if (rasters.empty()) throw RasterError("stack: no rasters");
  std::vector<ImageF> layers;
  layers.reserve(rasters.size());
  const GridMeta& meta = rasters.front().meta();
  for (const auto& r : rasters) {
    require_compatible(meta, r.meta(), "stack");
    if (r.meta().nodata == meta.nodata) {
      layers.push_back(r.values());
    } else {
      // Re-map a foreign nodata sentinel onto the cube's.
      layers.push_back((r.values() == r.meta().nodata).select(meta.nodata, r.values()));
    }
  }
  return HeightCube(meta, years, std::move(layers));
}

// ---------------------------------------------------------------------------
// File I/O

namespace {

fs::path stem_of(const fs::path& p) {
  if (p.extension() == ".f32" || p.extension() == ".hdr") return p.parent_path() / p.stem();
  return p;
}

fs::path with_ext(const fs::path& stem, const char* ext) {
  fs::path out = stem;
  out += ext;
  return out;
}

std::map<std::string, std::string> read_header(const fs::path& hdr) {
  std::ifstream in(hdr);
  if (!in) throw RasterError("cannot open header " + hdr.string());
  std::map<std::string, std::string> kv;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line[0] == '#') continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw RasterError(hdr.string() + ":" + std::to_string(lineno) + ": malformed header line");
    }
    kv[line.substr(0, eq)] = line.substr(eq + 1);
  }
  return kv;
}

template <typename T>
T parse_number(const std::map<std::string, std::string>& kv, const std::string& key,
               const fs::path& hdr) {
  auto it = kv.find(key);
  if (it == kv.end()) throw RasterError(hdr.string() + ": missing header key '" + key + "'");
  std::istringstream ss(it->second);
  T v{};
  ss >> v;
  if (!ss || !(ss >> std::ws).eof()) {
    throw RasterError(hdr.string() + ": malformed value for '" + key + "'");
  }
  return v;
}

GridMeta meta_from_header(const std::map<std::string, std::string>& kv, const fs::path& hdr) {
  GridMeta m;
  m.width = parse_number<int>(kv, "width", hdr);
  m.height = parse_number<int>(kv, "height", hdr);
  m.pixel_size = parse_number<double>(kv, "pixel_size", hdr);
  m.origin_x = parse_number<double>(kv, "origin_x", hdr);
  m.origin_y = parse_number<double>(kv, "origin_y", hdr);
  m.crs = kv.count("crs") ? kv.at("crs") : std::string{};
  m.nodata = kv.count("nodata") ? parse_number<float>(kv, "nodata", hdr) : kDefaultNodata;
  try {
    m.validate();
  } catch (const RasterError& e) {
    throw RasterError(hdr.string() + ": " + e.what());
  }
  return m;
}

std::uint32_t to_le(std::uint32_t v) {
  if constexpr (std::endian::native == std::endian::little) return v;
  return ((v & 0xFFu) << 24) | ((v & 0xFF00u) << 8) | ((v >> 8) & 0xFF00u) | (v >> 24);
}

}  // namespace

GridMeta read_grid(const fs::path& path) {
  const fs::path hdr = with_ext(stem_of(path), ".hdr");
  return meta_from_header(read_header(hdr), hdr);
}

std::optional<int> read_raster_year(const fs::path& path) {
  const fs::path hdr = with_ext(stem_of(path), ".hdr");
  auto kv = read_header(hdr);
  if (!kv.count("year")) return std::nullopt;
  return parse_number<int>(kv, "year", hdr);
}

HeightRaster read_raster(const fs::path& path) {
  const fs::path stem = stem_of(path);
  const fs::path hdr = with_ext(stem, ".hdr");
  const fs::path bin = with_ext(stem, ".f32");
  const GridMeta meta = meta_from_header(read_header(hdr), hdr);

  std::ifstream in(bin, std::ios::binary);
  if (!in) throw RasterError("cannot open payload " + bin.string());
  const auto expected = static_cast<std::uintmax_t>(meta.width) * meta.height * 4u;
  const auto actual = fs::file_size(bin);
  if (actual != expected) {
    throw RasterError(bin.string() + ": payload size " + std::to_string(actual) +
                      " does not match header (" + std::to_string(expected) + " bytes)");
  }
  std::vector<std::uint32_t> raw(static_cast<std::size_t>(meta.width) * meta.height);
  in.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(expected));
  if (!in) throw RasterError(bin.string() + ": short read");

  ImageF values(meta.height, meta.width);
  for (std::size_t i = 0; i < raw.size(); ++i) {
    float v = std::bit_cast<float>(to_le(raw[i]));
    if (v != meta.nodata) {
      if (!std::isfinite(v)) throw RasterError(bin.string() + ": non-finite height value");
      if (v > kMaxHeight) {
        v = meta.nodata;
      } else if (v < 0.0f) {
        v = 0.0f;
      }
    }
    values.data()[i] = v;
  }
  return HeightRaster(meta, std::move(values));
}

void write_raster(const HeightRaster& r, const fs::path& path, std::optional<int> year) {
  const fs::path stem = stem_of(path);
  if (stem.has_parent_path()) fs::create_directories(stem.parent_path());
  const GridMeta& m = r.meta();
  {
    std::ofstream hdr(with_ext(stem, ".hdr"));
    if (!hdr) throw RasterError("cannot write header for " + stem.string());
    hdr << std::setprecision(17);
    hdr << "width=" << m.width << "\nheight=" << m.height << "\npixel_size=" << m.pixel_size
        << "\norigin_x=" << m.origin_x << "\norigin_y=" << m.origin_y << "\ncrs=" << m.crs
        << "\nnodata=" << std::setprecision(9) << m.nodata << "\n";
    if (year) hdr << "year=" << *year << "\n";
    if (!hdr) throw RasterError("failed writing header for " + stem.string());
  }
  std::vector<std::uint32_t> raw(static_cast<std::size_t>(r.values().size()));
  for (std::size_t i = 0; i < raw.size(); ++i) {
    raw[i] = to_le(std::bit_cast<std::uint32_t>(r.values().data()[i]));
  }
  std::ofstream bin(with_ext(stem, ".f32"), std::ios::binary | std::ios::trunc);
  if (!bin) throw RasterError("cannot write payload for " + stem.string());
  bin.write(reinterpret_cast<const char*>(raw.data()),
            static_cast<std::streamsize>(raw.size() * sizeof(std::uint32_t)));
  if (!bin) throw RasterError("failed writing payload for " + stem.string());
}

HeightCube read_cube(const fs::path& dir) {
  if (!fs::is_directory(dir)) throw RasterError("cube directory not found: " + dir.string());
  std::vector<std::pair<int, fs::path>> entries;
  for (const auto& e : fs::directory_iterator(dir)) {
    if (e.path().extension() != ".hdr") continue;
    auto year = read_raster_year(e.path());
    if (!year) throw RasterError(e.path().string() + ": cube layer header lacks a year");
    entries.emplace_back(*year, e.path());
  }
  if (entries.empty()) throw RasterError("cube directory has no layers: " + dir.string());
  std::sort(entries.begin(), entries.end());
  std::vector<HeightRaster> rasters;
  std::vector<int> years;
  for (const auto& [y, p] : entries) {
    rasters.push_back(read_raster(p));
    years.push_back(y);
  }
  return stack(rasters, years);
}

void write_cube(const HeightCube& cube, const fs::path& dir) {
  fs::create_directories(dir);
  for (std::size_t t = 0; t < cube.size(); ++t) {
    write_raster(cube.slice(t), dir / std::to_string(cube.years()[t]), cube.years()[t]);
  }
}

}  // namespace canopy
