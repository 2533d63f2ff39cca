// canopy: command-line front end for the height-change pipeline.

#include "canopy/config.hpp"
#include "canopy/geojson.hpp"
#include "canopy/pipeline.hpp"
#include "canopy/synth.hpp"

#include <CLI11.hpp>

#include <fstream>
#include <iostream>
#include <sstream>

namespace fs = std::filesystem;
using namespace canopy;

namespace {

constexpr int kExitConfig = 2;
constexpr int kExitStage = 3;

void log_line(const std::string& line) { std::cerr << line << std::endl; }

// "rect:year,col,row,w,h,drop" or "disc:year,col,row,radius,drop"
DisturbanceEvent parse_event(const std::string& spec) {
  const auto colon = spec.find(':');
  if (colon == std::string::npos) throw ConfigError({"--event: expected shape:values, got '" + spec + "'"});
  const std::string shape = spec.substr(0, colon);
  std::vector<double> v;
  std::stringstream ss(spec.substr(colon + 1));
  std::string item;
  while (std::getline(ss, item, ',')) {
    try {
      v.push_back(std::stod(item));
    } catch (const std::exception&) {
      throw ConfigError({"--event: bad number '" + item + "' in '" + spec + "'"});
    }
  }
  auto i = [&](std::size_t k) { return static_cast<int>(v[k]); };
  if (shape == "rect" && v.size() == 6) return DisturbanceEvent::rect(i(0), i(1), i(2), i(3), i(4), v[5]);
  if (shape == "disc" && v.size() == 5) return DisturbanceEvent::disc(i(0), i(1), i(2), v[3], v[4]);
  throw ConfigError({"--event: expected rect:year,col,row,w,h,drop or disc:year,col,row,radius,drop"});
}

GridMeta grid_from(const fs::path& p) {
  if (fs::is_directory(p)) return read_cube(p).meta();
  return read_grid(p);
}

fs::path require_out(const fs::path& out) {
  if (out.empty()) throw ConfigError({"--out: output directory required"});
  fs::create_directories(out);
  return out;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Canopy height change detection: co-registration, TV denoising, disturbance polygons"};
  app.require_subcommand(1);
  app.fallthrough();

  fs::path config_path;
  int workers = 0;
  fs::path out_dir;
  app.add_option("--config", config_path, "Configuration file (key=value)");
  app.add_option("--workers", workers, "Worker threads")->check(CLI::PositiveNumber);
  app.add_option("--out", out_dir, "Output directory");

  // simulate
  auto* sim = app.add_subcommand("simulate", "Write a synthetic cube with known truth");
  SynthConfig scfg;
  int n_random_events = 0, max_shift = 0;
  std::uint64_t event_seed = 11, shift_seed = 13;
  std::vector<std::string> event_specs;
  sim->add_option("--seed", scfg.seed, "Noise seed");
  sim->add_option("--layout-seed", scfg.layout_seed, "Stand layout seed");
  sim->add_option("--layers", scfg.T, "Number of years");
  sim->add_option("--height", scfg.H, "Rows");
  sim->add_option("--width", scfg.W, "Columns");
  sim->add_option("--first-year", scfg.first_year);
  sim->add_option("--pixel-size", scfg.pixel_size);
  sim->add_option("--stands", scfg.n_stands);
  sim->add_option("--noise", scfg.noise_sigma, "Gaussian noise sigma (m)");
  sim->add_option("--event", event_specs, "rect:year,col,row,w,h,drop or disc:year,col,row,radius,drop");
  sim->add_option("--random-events", n_random_events, "Add N random events");
  sim->add_option("--event-seed", event_seed);
  sim->add_option("--max-shift", max_shift, "Random per-year shifts within +-N px (N <= 2)");
  sim->add_option("--shift-seed", shift_seed);

  // coregister
  auto* coreg = app.add_subcommand("coregister", "Align every layer to the reference layer");
  fs::path coreg_in;
  std::optional<int> window, ref_index, patch_size, patch_overlap;
  coreg->add_option("--input", coreg_in, "Cube directory")->required();
  coreg->add_option("--window", window, "Search radius (px)");
  coreg->add_option("--reference-index", ref_index, "Reference layer index (default middle)");
  coreg->add_option("--patch-size", patch_size);
  coreg->add_option("--patch-overlap", patch_overlap);

  // denoise
  auto* den = app.add_subcommand("denoise", "Spatio-temporal TV denoising");
  fs::path den_in;
  std::optional<double> lambda_temp, lambda_spat, tol;
  std::optional<int> max_iters, tile_size;
  den->add_option("--input", den_in, "Cube directory")->required();
  den->add_option("--lambda-temp", lambda_temp);
  den->add_option("--lambda-spat", lambda_spat);
  den->add_option("--max-iters", max_iters);
  den->add_option("--tol", tol);
  den->add_option("--tile-size", tile_size, "Tile size in px (0 = whole cube)");

  // delta
  auto* del = app.add_subcommand("delta", "Height-loss disturbance polygons per consecutive pair");
  fs::path del_in, forest_mask;
  std::optional<double> threshold, min_area;
  std::optional<int> kernel;
  del->add_option("--input", del_in, "Cube directory")->required();
  del->add_option("--threshold", threshold, "Height loss threshold (m)");
  del->add_option("--min-area", min_area, "Minimum polygon area (m^2)");
  del->add_option("--kernel", kernel, "Opening kernel side (px, odd)");
  del->add_option("--forest-mask", forest_mask, "Raster or GeoJSON forest mask");

  // validate-height
  auto* vh = app.add_subcommand("validate-height", "Plot-level height validation");
  fs::path vh_in, vh_plots;
  std::optional<double> radius;
  vh->add_option("--input", vh_in, "Cube directory")->required();
  vh->add_option("--plots", vh_plots, "Plots CSV")->required();
  vh->add_option("--radius", radius, "Search radius (m)");

  // validate-polygons
  auto* vp = app.add_subcommand("validate-polygons", "Area and plot metrics for predicted polygons");
  fs::path vp_pred, vp_ref, vp_grid, vp_plots;
  std::vector<int> period;
  vp->add_option("--predicted", vp_pred, "Predicted polygons (GeoJSON)")->required();
  vp->add_option("--reference", vp_ref, "Reference polygons (GeoJSON)");
  vp->add_option("--grid", vp_grid, "Raster or cube directory defining the evaluation grid");
  vp->add_option("--plots", vp_plots, "Plots CSV");
  vp->add_option("--period", period, "Plot period: two years lo hi")->expected(2);

  // pipeline
  auto* pipe = app.add_subcommand("pipeline", "Run stack, coregister, denoise, delta and metrics");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : kExitConfig;
  }

  try {
    // Stage subcommands take their defaults from the config file when given.
    ConfigOptions opts;
    if (workers > 0) opts.overrides["run.workers"] = std::to_string(workers);
    if (!out_dir.empty()) opts.overrides["output.dir"] = out_dir.string();
    PipelineConfig cfg;
    if (*pipe) {
      if (config_path.empty()) throw ConfigError({"pipeline: --config is required"});
      cfg = validate_config(config_path, opts);
    } else if (!config_path.empty()) {
      opts.require_io = false;
      opts.check_paths = false;
      cfg = validate_config(config_path, opts);
    } else {
      cfg = parse_config("", {{}, false, false, opts.overrides});
    }

    if (*pipe) {
      try {
        const auto result = run_pipeline(cfg, log_line);
        std::cout << result.manifest_path.string() << "\n";
      } catch (const StageError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitStage;
      }
      return 0;
    }

    const fs::path out = require_out(cfg.output_dir);
    if (*sim) {
      for (const auto& s : event_specs) scfg.events.push_back(parse_event(s));
      if (n_random_events > 0) {
        for (const auto& e : random_events(scfg, n_random_events, event_seed)) scfg.events.push_back(e);
      }
      if (max_shift > 0) scfg.shifts = random_shifts(scfg.T, max_shift, shift_seed, scfg.T / 2);
      try {
        scfg.validate();
      } catch (const SynthError& e) {
        throw ConfigError({e.what()});
      }
      const auto truth = generate(scfg);
      write_synth(truth, out);
      log_line("[simulate] " + std::to_string(truth.true_polygons.size()) + " true polygons");
    } else if (*coreg) {
      if (window) cfg.coreg.window_radius = *window;
      if (ref_index) cfg.coreg.reference_index = *ref_index;
      if (patch_size) cfg.coreg.patch_size = *patch_size;
      if (patch_overlap) cfg.coreg.patch_overlap = *patch_overlap;
      try {
        cfg.coreg.validate();
      } catch (const std::exception& e) {
        throw ConfigError({e.what()});
      }
      const auto result = coregister_cube(read_cube(coreg_in), cfg.coreg, cfg.workers, [](int y, double s) {
        log_line("[coregister] layer " + std::to_string(y) + " " + std::to_string(s) + " s");
      });
      write_cube(result.cube, out);
      write_offsets_csv(result.offsets, out / "offsets.csv");
    } else if (*den) {
      if (lambda_temp) cfg.tv.lambda_temp = *lambda_temp;
      if (lambda_spat) cfg.tv.lambda_spat = *lambda_spat;
      if (max_iters) cfg.tv.max_iters = *max_iters;
      if (tol) cfg.tv.rel_tol = *tol;
      if (tile_size) cfg.tile_size = *tile_size;
      try {
        cfg.tv.validate();
      } catch (const std::exception& e) {
        throw ConfigError({e.what()});
      }
      const auto result = denoise_tiled(read_cube(den_in), cfg.tv, cfg.tile_size, cfg.workers, std::nullopt,
                                        [](const TileReport& t, double s) { log_line("[denoise] " + describe_tile(t, s)); });
      write_cube(result.cube, out);
      write_tv_report_csv(result.tiles, out / "tv_report.csv");
    } else if (*del) {
      if (threshold) cfg.delta.loss_threshold = *threshold;
      if (min_area) cfg.delta.min_area_m2 = *min_area;
      if (kernel) cfg.delta.kernel = *kernel;
      if (!forest_mask.empty()) cfg.forest_mask_path = forest_mask;
      try {
        cfg.delta.validate();
      } catch (const std::exception& e) {
        throw ConfigError({e.what()});
      }
      const HeightCube cube = read_cube(del_in);
      if (!cfg.forest_mask_path.empty()) cfg.delta.forest_mask = load_forest_mask(cfg.forest_mask_path, cube.meta());
      const auto polygons = cube_to_polygons(cube, cfg.delta, cfg.workers);
      write_polygon_outputs(polygons, cube.years(), cube.meta().crs, out);
      log_line("[delta] " + std::to_string(polygons.size()) + " polygons");
    } else if (*vh) {
      const auto v = height_validation(read_cube(vh_in), read_plots_csv(vh_plots), radius.value_or(cfg.height_radius_m));
      write_height_validation_csv(v, out);
      print_summary(std::cout, v);
    } else if (*vp) {
      const PolygonSet predicted = read_geojson(vp_pred);
      if (!vp_ref.empty()) {
        if (vp_grid.empty()) throw ConfigError({"validate-polygons: --reference needs --grid"});
        const GridMeta grid = grid_from(vp_grid);
        const PolygonSet reference = read_geojson(vp_ref);
        const auto am = area_metrics(predicted, reference, grid, cfg.size_bins);
        write_area_metrics_csv(am, out / "area_metrics.csv");
        write_pr_curve_csv(pr_curve(predicted, reference, grid), out / "pr_curve.csv");
        print_summary(std::cout, am);
      }
      if (!vp_plots.empty()) {
        if (period.size() != 2 && !cfg.plot_period) throw ConfigError({"validate-polygons: --plots needs --period"});
        const auto [lo, hi] = period.size() == 2 ? std::make_pair(period[0], period[1]) : *cfg.plot_period;
        const auto pm = plot_metrics(read_plots_csv(vp_plots), predicted, lo, hi);
        write_plot_metrics_csv(pm, out / "plot_metrics.csv");
        print_summary(std::cout, pm);
      }
      if (vp_ref.empty() && vp_plots.empty()) throw ConfigError({"validate-polygons: give --reference or --plots"});
    }
  } catch (const ConfigError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitStage;
  }
  return 0;
}
