#include "canopy/pipeline.hpp"

#include "canopy/geojson.hpp"
#include "canopy/geometry.hpp"

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <fstream>
#include <iomanip>
#include <mutex>
#include <sstream>

namespace canopy {

namespace fs = std::filesystem;

StageError::StageError(std::string stage, const std::string& message)
    : std::runtime_error("[" + stage + "] " + message), stage_(std::move(stage)) {}

std::uint64_t fnv1a64(const void* data, std::size_t size, std::uint64_t seed) {
  const auto* p = static_cast<const unsigned char*>(data);
  std::uint64_t h = seed;
  for (std::size_t i = 0; i < size; ++i) {
    h ^= p[i];
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::uint64_t hash_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read " + path.string());
  std::uint64_t h = 0xcbf29ce484222325ULL;
  std::vector<char> buf(1 << 16);
  while (in) {
    in.read(buf.data(), static_cast<std::streamsize>(buf.size()));
    h = fnv1a64(buf.data(), static_cast<std::size_t>(in.gcount()), h);
  }
  return h;
}

std::string describe_tile(const TileReport& t, double seconds) {
  std::ostringstream ss;
  ss << "tile col0=" << t.col0 << " row0=" << t.row0 << " " << t.cols << "x" << t.rows << " pass=" << t.pass
     << " iters=" << t.report.iterations << " " << std::fixed << std::setprecision(3) << seconds << " s";
  return ss.str();
}

std::vector<ManifestEntry> build_manifest(const fs::path& root, const std::vector<fs::path>& files) {
  std::vector<ManifestEntry> out;
  for (const auto& f : files) {
    out.push_back({fs::relative(f, root).generic_string(), hash_file(f), fs::file_size(f)});
  }
  std::sort(out.begin(), out.end(), [](const auto& a, const auto& b) { return a.path < b.path; });
  return out;
}

void write_manifest(const std::vector<ManifestEntry>& entries, const fs::path& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << "path,fnv1a64,bytes\n";
  for (const auto& e : entries) {
    char hex[17];
    std::snprintf(hex, sizeof hex, "%016llx", static_cast<unsigned long long>(e.hash));
    out << e.path << "," << hex << "," << e.bytes << "\n";
  }
}

void write_tv_report_csv(const std::vector<TileReport>& tiles, const fs::path& path) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw TvError("cannot write " + path.string());
  const bool tiled = tiles.size() > 1;
  out << (tiled ? "tile,col0,row0," : "") << "iter,objective,rel_change\n" << std::setprecision(17);
  for (std::size_t i = 0; i < tiles.size(); ++i) {
    for (const auto& e : tiles[i].report.log) {
      if (tiled) out << i << "," << tiles[i].col0 << "," << tiles[i].row0 << ",";
      out << e.iter << "," << e.objective << "," << e.rel_change << "\n";
    }
  }
}

std::vector<fs::path> write_polygon_outputs(const PolygonSet& polygons, const std::vector<int>& years,
                                            const std::string& crs, const fs::path& dir) {
  fs::create_directories(dir);
  std::vector<fs::path> written;
  // The first layer has no predecessor, so no file for it.
  for (std::size_t i = 1; i < years.size(); ++i) {
    PolygonSet subset;
    for (const auto& p : polygons) {
      if (p.year() && *p.year() == years[i]) subset.push_back(p);
    }
    const fs::path f = dir / (std::to_string(years[i]) + ".geojson");
    write_geojson(subset, f, crs);
    written.push_back(f);
  }
  const fs::path all = dir / "all.geojson";
  write_geojson(polygons, all, crs);
  written.push_back(all);
  return written;
}

HeightCube load_input_cube(const PipelineConfig& cfg) {
  if (!cfg.input_cube_dir.empty()) return read_cube(cfg.input_cube_dir);
  std::vector<HeightRaster> rasters;
  std::vector<int> years;
  for (std::size_t i = 0; i < cfg.input_rasters.size(); ++i) {
    rasters.push_back(read_raster(cfg.input_rasters[i]));
    if (!cfg.input_years.empty()) {
      years.push_back(cfg.input_years[i]);
    } else if (auto y = read_raster_year(cfg.input_rasters[i])) {
      years.push_back(*y);
    } else {
      throw RasterError("no year for " + cfg.input_rasters[i].string() +
                        " (set input.years or a year key in the header)");
    }
  }
  return stack(rasters, years);
}

Mask load_forest_mask(const fs::path& path, const GridMeta& grid) {
  const auto ext = path.extension().string();
  if (ext == ".geojson" || ext == ".json") return rasterize(read_geojson(path), grid);
  const HeightRaster r = read_raster(path);
  require_compatible(r.meta(), grid, "forest mask");
  return ((r.values() != r.meta().nodata) && (r.values() > 0.0f)).cast<std::uint8_t>();
}

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

std::string fmt_seconds(double s) {
  std::ostringstream ss;
  ss << std::fixed << std::setprecision(3) << s << " s";
  return ss.str();
}

std::vector<fs::path> files_under(const fs::path& dir) {
  std::vector<fs::path> out;
  if (!fs::exists(dir)) return out;
  for (const auto& e : fs::recursive_directory_iterator(dir)) {
    if (e.is_regular_file()) out.push_back(e.path());
  }
  std::sort(out.begin(), out.end());
  return out;
}

constexpr const char* kStageDirs[] = {"registered", "denoised", "polygons", "metrics"};

// Moves every stage directory under <root>/failed/.
void quarantine(const fs::path& root) {
  for (const char* d : kStageDirs) {
    if (!fs::exists(root / d)) continue;
    fs::create_directories(root / "failed");
    fs::rename(root / d, root / "failed" / d);
  }
}

}  // namespace

PipelineResult run_pipeline(const PipelineConfig& cfg, const LogFn& log_fn) {
  std::mutex log_mu;
  auto log = [&](const std::string& line) {
    if (!log_fn) return;
    std::lock_guard lock(log_mu);
    log_fn(line);
  };

  const fs::path root = cfg.output_dir;
  fs::create_directories(root);
  std::error_code ec;
  fs::remove_all(root / "failed", ec);
  fs::remove(root / "manifest.txt", ec);
  for (const char* d : kStageDirs) fs::remove_all(root / d, ec);

  std::vector<fs::path> produced;
  std::string stage;
  auto track_dir = [&](const fs::path& dir) {
    for (auto& f : files_under(dir)) produced.push_back(f);
  };

  try {
    stage = "stack";
    auto t0 = Clock::now();
    HeightCube cube = load_input_cube(cfg);
    log("[stack] " + std::to_string(cube.size()) + " layers " + std::to_string(cube.meta().width) + "x" +
        std::to_string(cube.meta().height) + " " + fmt_seconds(seconds_since(t0)));

    if (cfg.run_coregister) {
      stage = "coregister";
      t0 = Clock::now();
      auto reg = coregister_cube(cube, cfg.coreg, cfg.workers, [&](int year, double s) {
        log("[coregister] layer " + std::to_string(year) + " " + fmt_seconds(s));
      });
      write_cube(reg.cube, root / "registered");
      write_offsets_csv(reg.offsets, root / "registered" / "offsets.csv");
      track_dir(root / "registered");
      cube = std::move(reg.cube);
      log("[coregister] done " + fmt_seconds(seconds_since(t0)));
    }

    if (cfg.run_denoise) {
      stage = "denoise";
      t0 = Clock::now();
      auto den = denoise_tiled(cube, cfg.tv, cfg.tile_size, cfg.workers, std::nullopt,
                               [&](const TileReport& t, double s) { log("[denoise] " + describe_tile(t, s)); });
      write_cube(den.cube, root / "denoised");
      write_tv_report_csv(den.tiles, root / "denoised" / "tv_report.csv");
      track_dir(root / "denoised");
      cube = std::move(den.cube);
      log("[denoise] done " + fmt_seconds(seconds_since(t0)));
    }

    stage = "delta";
    t0 = Clock::now();
    DeltaConfig dcfg = cfg.delta;
    if (!cfg.forest_mask_path.empty()) dcfg.forest_mask = load_forest_mask(cfg.forest_mask_path, cube.meta());
    const PolygonSet polygons = cube_to_polygons(cube, dcfg, cfg.workers);
    for (auto& f : write_polygon_outputs(polygons, cube.years(), cube.meta().crs, root / "polygons")) {
      produced.push_back(f);
    }
    log("[delta] " + std::to_string(polygons.size()) + " polygons " + fmt_seconds(seconds_since(t0)));

    if (!cfg.reference_polygons.empty() || !cfg.plots.empty()) {
      stage = "metrics";
      t0 = Clock::now();
      const fs::path mdir = root / "metrics";
      fs::create_directories(mdir);
      if (!cfg.reference_polygons.empty()) {
        const PolygonSet reference = read_geojson(cfg.reference_polygons);
        const auto am = area_metrics(polygons, reference, cube.meta(), cfg.size_bins);
        write_area_metrics_csv(am, mdir / "area_metrics.csv");
        write_pr_curve_csv(pr_curve(polygons, reference, cube.meta()), mdir / "pr_curve.csv");
      }
      if (!cfg.plots.empty()) {
        const auto plots = read_plots_csv(cfg.plots);
        const auto period = cfg.plot_period.value_or(std::make_pair(cube.years().front(), cube.years().back()));
        write_plot_metrics_csv(plot_metrics(plots, polygons, period.first, period.second),
                               mdir / "plot_metrics.csv");
        write_height_validation_csv(height_validation(cube, plots, cfg.height_radius_m), mdir);
      }
      track_dir(mdir);
      log("[metrics] done " + fmt_seconds(seconds_since(t0)));
    }
  } catch (const std::exception& e) {
    try {
      quarantine(root);
    } catch (const std::exception&) {
      // Keep the original error.
    }
    throw StageError(stage, e.what());
  }

  PipelineResult result;
  result.manifest = build_manifest(root, produced);
  result.manifest_path = root / "manifest.txt";
  write_manifest(result.manifest, result.manifest_path);
  return result;
}

}  // namespace canopy
