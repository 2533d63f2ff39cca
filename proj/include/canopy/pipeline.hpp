#pragma once

#include "canopy/config.hpp"

#include <cstdint>
#include <filesystem>
#include <functional>
#include <stdexcept>
#include <string>
#include <vector>

namespace canopy {

/// A failure inside one pipeline stage; what() is prefixed with "[stage]".
class StageError : public std::runtime_error {
public:
  StageError(std::string stage, const std::string& message);
  const std::string& stage() const { return stage_; }

private:
  std::string stage_;
};

/// 64-bit FNV-1a.
std::uint64_t fnv1a64(const void* data, std::size_t size, std::uint64_t seed = 0xcbf29ce484222325ULL);
std::uint64_t hash_file(const std::filesystem::path& path);

struct ManifestEntry {
  std::string path;  // relative to the output directory, '/' separated
  std::uint64_t hash = 0;
  std::uintmax_t bytes = 0;
};

struct PipelineResult {
  std::vector<ManifestEntry> manifest;
  std::filesystem::path manifest_path;
};

using LogFn = std::function<void(const std::string&)>;

/// Loads the input cube described by cfg (cube directory or raster list).
HeightCube load_input_cube(const PipelineConfig& cfg);

/// Reads a forest mask from GeoJSON (rasterized) or a raster (value > 0) on `grid`.
Mask load_forest_mask(const std::filesystem::path& path, const GridMeta& grid);

/// stack, coregister, denoise, delta, then metrics when reference data is given.
/// Every artifact is listed with its hash in <output>/manifest.txt. On failure,
/// files produced so far move under <output>/failed/ and StageError is thrown.
PipelineResult run_pipeline(const PipelineConfig& cfg, const LogFn& log = {});

/// One log line for a solved TV tile: position, size, pass, iterations, wall time.
std::string describe_tile(const TileReport& t, double seconds);

/// Writes the TV log as `iter,objective,rel_change`.
void write_tv_report_csv(const std::vector<TileReport>& tiles, const std::filesystem::path& path);

/// Per-year polygon files (<year>.geojson) plus all.geojson in `dir`; returns the paths written.
std::vector<std::filesystem::path> write_polygon_outputs(const PolygonSet& polygons,
                                                         const std::vector<int>& years,
                                                         const std::string& crs,
                                                         const std::filesystem::path& dir);

std::vector<ManifestEntry> build_manifest(const std::filesystem::path& root,
                                          const std::vector<std::filesystem::path>& files);
void write_manifest(const std::vector<ManifestEntry>& entries, const std::filesystem::path& path);

}  // namespace canopy
