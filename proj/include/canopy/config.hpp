#pragma once

#include "canopy/coregister.hpp"
#include "canopy/delta.hpp"
#include "canopy/metrics.hpp"
#include "canopy/tv.hpp"

#include <filesystem>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace canopy {

/// Carries every problem found in a configuration, not just the first.
class ConfigError : public std::runtime_error {
public:
  explicit ConfigError(std::vector<std::string> errors);
  const std::vector<std::string>& errors() const { return errors_; }

private:
  std::vector<std::string> errors_;
};

struct PipelineConfig {
  std::filesystem::path input_cube_dir;
  std::vector<std::filesystem::path> input_rasters;
  std::vector<int> input_years;
  std::filesystem::path output_dir;

  bool run_coregister = true;
  bool run_denoise = true;
  OffsetSearchConfig coreg;
  TvConfig tv;
  DeltaConfig delta;  // forest_mask is loaded at run time from forest_mask_path
  std::filesystem::path forest_mask_path;

  std::filesystem::path reference_polygons;
  std::filesystem::path plots;
  double height_radius_m = 18.0;
  std::optional<std::pair<int, int>> plot_period;
  SizeBins size_bins;

  int workers = 1;
  /// Spatial tile size for denoising; <= 0 solves the whole cube at once.
  int tile_size = 256;
};

struct ConfigOptions {
  /// Relative paths in the file resolve against this directory.
  std::filesystem::path base_dir;
  bool check_paths = true;
  /// When false, input.* and output.dir may be absent (stage subcommands).
  bool require_io = true;
  /// Applied on top of the file; values are taken verbatim (paths not rebased).
  std::map<std::string, std::string> overrides;
};

/// Parses flat `section.key=value` text. Throws ConfigError listing every parse
/// error (with line numbers) and every invariant violation.
PipelineConfig parse_config(const std::string& text, const ConfigOptions& opts = {});
PipelineConfig validate_config(const std::filesystem::path& path, ConfigOptions opts = {});

/// Key/value lines, "# comment" lines ignored. Line-numbered errors are appended to `errors`.
std::map<std::string, std::pair<std::string, int>> parse_key_values(const std::string& text,
                                                                     std::vector<std::string>& errors);

}  // namespace canopy
