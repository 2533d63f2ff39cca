#include "canopy/config.hpp"

#include "helpers.hpp"

#include <doctest.h>

#include <algorithm>
#include <fstream>

using namespace canopy;
namespace fs = std::filesystem;

namespace {

ConfigOptions no_paths() {
  ConfigOptions o;
  o.check_paths = false;
  return o;
}

std::vector<std::string> errors_of(const std::string& text, const ConfigOptions& opts = no_paths()) {
  try {
    parse_config(text, opts);
  } catch (const ConfigError& e) {
    return e.errors();
  }
  return {};
}

bool any_contains(const std::vector<std::string>& errors, const std::string& needle) {
  return std::any_of(errors.begin(), errors.end(),
                     [&](const std::string& e) { return e.find(needle) != std::string::npos; });
}

const char* kMinimal = "input.cube_dir = cube\noutput.dir = out\n";

}  // namespace

TEST_CASE("config: well-formed file with defaults") {
  const auto cfg = parse_config(std::string(kMinimal) +
                                    "# comment\n"
                                    "tv.lambda_temp = 2.5\n"
                                    "coreg.enabled = false\n"
                                    "metrics.period = 2015, 2020\n"
                                    "metrics.size_bins = 10,50,500\n"
                                    "run.workers = 4\n",
                                no_paths());
  CHECK(cfg.input_cube_dir == fs::path("cube"));
  CHECK(cfg.tv.lambda_temp == 2.5);
  CHECK(cfg.tv.lambda_spat == 0.5);
  CHECK_FALSE(cfg.run_coregister);
  CHECK(cfg.run_denoise);
  CHECK(cfg.plot_period == std::make_pair(2015, 2020));
  CHECK(cfg.size_bins.edges == std::vector<double>{10, 50, 500});
  CHECK(cfg.workers == 4);
  CHECK(cfg.delta.min_area_m2 == 10.0);
  CHECK(cfg.delta.loss_threshold == 5.0);
}

TEST_CASE("config: invariant violations name the field and are all reported") {
  auto errors = errors_of(std::string(kMinimal) + "tv.lambda_temp = -1\n");
  REQUIRE(errors.size() == 1);
  CHECK(errors[0].find("tv.lambda_temp") != std::string::npos);

  errors = errors_of(std::string(kMinimal) + "tv.lambda_temp = -1\ndelta.kernel = 4\nrun.workers = 0\n");
  CHECK(errors.size() == 3);
  CHECK(any_contains(errors, "tv.lambda_temp"));
  CHECK(any_contains(errors, "delta.kernel"));
  CHECK(any_contains(errors, "run.workers"));

  CHECK(any_contains(errors_of(std::string(kMinimal) + "tv.tau = 0.5\n"), "tau * sigma"));
  CHECK(any_contains(errors_of(std::string(kMinimal) + "coreg.patch_overlap = 2\n"), "coreg.patch_overlap"));
  CHECK(any_contains(errors_of(std::string(kMinimal) + "metrics.period = 2015\n"), "metrics.period"));
  CHECK(any_contains(errors_of(std::string(kMinimal) + "metrics.size_bins = 10,5\n"), "metrics.size_bins"));
}

TEST_CASE("config: parse errors carry line numbers") {
  const auto errors = errors_of(std::string(kMinimal) +
                                "tv.max_iters = many\n"
                                "nonsense line\n"
                                "tv.bogus = 1\n"
                                "coreg.enabled = maybe\n"
                                "run.workers = 1\nrun.workers = 2\n");
  CHECK(any_contains(errors, "line 3: tv.max_iters"));
  CHECK(any_contains(errors, "line 4: expected key=value"));
  CHECK(any_contains(errors, "line 5: unknown key 'tv.bogus'"));
  CHECK(any_contains(errors, "line 6: coreg.enabled"));
  CHECK(any_contains(errors, "line 8: duplicate key"));
}

TEST_CASE("config: input and output requirements") {
  CHECK(any_contains(errors_of("output.dir = o\n"), "input"));
  CHECK(any_contains(errors_of("input.cube_dir = c\n"), "output.dir"));
  CHECK(any_contains(errors_of("input.cube_dir = c\ninput.rasters = a,b\noutput.dir = o\n"), "exactly one"));
  CHECK(any_contains(errors_of("input.rasters = a,b\ninput.years = 2015,2014\noutput.dir = o\n"),
                     "strictly increasing"));
  CHECK(any_contains(errors_of("input.rasters = a,b\ninput.years = 2015\noutput.dir = o\n"), "one year per raster"));
  auto opts = no_paths();
  opts.require_io = false;
  CHECK_NOTHROW(parse_config("tv.lambda_temp = 3\n", opts));
}

TEST_CASE("config: paths resolve against the file and must exist") {
  const auto dir = testing::temp_dir("config_paths");
  fs::create_directories(dir / "cube");
  std::ofstream(dir / "run.cfg") << "input.cube_dir = cube\noutput.dir = out\nmetrics.plots = plots.csv\n";
  try {
    validate_config(dir / "run.cfg");
    FAIL("expected a ConfigError");
  } catch (const ConfigError& e) {
    REQUIRE(e.errors().size() == 1);
    CHECK(e.errors()[0].find("metrics.plots: path not found") != std::string::npos);
  }
  std::ofstream(dir / "plots.csv") << "x\n";
  const auto cfg = validate_config(dir / "run.cfg");
  CHECK(cfg.input_cube_dir == dir / "cube");
  CHECK(cfg.output_dir == dir / "out");
  CHECK_THROWS_AS(validate_config(dir / "missing.cfg"), ConfigError);
}

TEST_CASE("config: overrides") {
  auto opts = no_paths();
  opts.overrides = {{"output.dir", "elsewhere"}, {"run.workers", "8"}};
  const auto cfg = parse_config(kMinimal, opts);
  CHECK(cfg.output_dir == fs::path("elsewhere"));
  CHECK(cfg.workers == 8);
  opts.overrides = {{"run.workers", "0"}, {"foo.bar", "1"}};
  const auto errors = errors_of(kMinimal, opts);
  CHECK(any_contains(errors, "override: unknown key 'foo.bar'"));
  CHECK(any_contains(errors, "run.workers"));
}
