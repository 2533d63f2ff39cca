#include "canopy/config.hpp"

#include <fstream>
#include <set>
#include <sstream>

namespace canopy {

namespace fs = std::filesystem;

namespace {

std::string join_errors(const std::vector<std::string>& errors) {
  std::string msg = "invalid configuration:";
  for (const auto& e : errors) msg += "\n  " + e;
  return msg;
}

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = trim(item);
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

const std::set<std::string>& known_keys() {
  static const std::set<std::string> keys{
      "input.cube_dir",         "input.rasters",        "input.years",
      "output.dir",             "coreg.enabled",        "coreg.window_radius",
      "coreg.reference_index",  "coreg.patch_size",     "coreg.patch_overlap",
      "tv.enabled",             "tv.lambda_temp",       "tv.lambda_spat",
      "tv.max_iters",           "tv.rel_tol",           "tv.tau",
      "tv.sigma",               "tv.log_every",         "delta.loss_threshold",
      "delta.kernel",           "delta.min_area_m2",    "delta.forest_mask",
      "metrics.reference_polygons", "metrics.plots",    "metrics.height_radius_m",
      "metrics.period",         "metrics.size_bins",    "run.workers",
      "run.tile_size"};
  return keys;
}

std::string where(int line) { return line > 0 ? "line " + std::to_string(line) + ": " : "override: "; }

// Typed reader that records errors instead of throwing.
class Reader {
public:
  Reader(const std::map<std::string, std::pair<std::string, int>>& kv, std::vector<std::string>& errors)
      : kv_(kv), errors_(errors) {}

  template <typename T>
  void get(const std::string& key, T& out) {
    auto it = kv_.find(key);
    if (it == kv_.end()) return;
    const auto& [text, line] = it->second;
    std::istringstream ss(text);
    T v{};
    if constexpr (std::is_same_v<T, bool>) {
      if (text == "true" || text == "1" || text == "yes") {
        out = true;
        return;
      }
      if (text == "false" || text == "0" || text == "no") {
        out = false;
        return;
      }
      errors_.push_back(where(line) + key + ": expected a boolean, got '" +
                        text + "'");
      return;
    } else {
      ss >> v;
      if (!ss || !(ss >> std::ws).eof()) {
        errors_.push_back(where(line) + key + ": cannot parse '" + text + "'");
        return;
      }
      out = v;
    }
  }

  template <typename T>
  void get_list(const std::string& key, std::vector<T>& out) {
    auto it = kv_.find(key);
    if (it == kv_.end()) return;
    out.clear();
    for (const auto& item : split_list(it->second.first)) {
      std::istringstream ss(item);
      T v{};
      ss >> v;
      if (!ss || !(ss >> std::ws).eof()) {
        errors_.push_back(where(it->second.second) + key +
                          ": cannot parse list item '" + item + "'");
        return;
      }
      out.push_back(v);
    }
  }

  std::optional<std::string> raw(const std::string& key) const {
    auto it = kv_.find(key);
    if (it == kv_.end()) return std::nullopt;
    return it->second.first;
  }

private:
  const std::map<std::string, std::pair<std::string, int>>& kv_;
  std::vector<std::string>& errors_;
};

fs::path resolve(const fs::path& base, const std::string& p) {
  fs::path path(p);
  if (path.is_relative() && !base.empty()) return base / path;
  return path;
}

}  // namespace

ConfigError::ConfigError(std::vector<std::string> errors)
    : std::runtime_error(join_errors(errors)), errors_(std::move(errors)) {}

std::map<std::string, std::pair<std::string, int>> parse_key_values(const std::string& text,
                                                                     std::vector<std::string>& errors) {
  std::map<std::string, std::pair<std::string, int>> kv;
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const std::string t = trim(line);
    if (t.empty() || t[0] == '#') continue;
    const auto eq = t.find('=');
    if (eq == std::string::npos) {
      errors.push_back("line " + std::to_string(lineno) + ": expected key=value");
      continue;
    }
    const std::string key = trim(t.substr(0, eq));
    if (key.empty()) {
      errors.push_back("line " + std::to_string(lineno) + ": empty key");
      continue;
    }
    if (kv.count(key)) {
      errors.push_back("line " + std::to_string(lineno) + ": duplicate key '" + key + "'");
      continue;
    }
    kv[key] = {trim(t.substr(eq + 1)), lineno};
  }
  return kv;
}

PipelineConfig parse_config(const std::string& text, const ConfigOptions& opts) {
  std::vector<std::string> errors;
  auto kv = parse_key_values(text, errors);
  for (const auto& [key, v] : kv) {
    if (!known_keys().count(key)) {
      errors.push_back("line " + std::to_string(v.second) + ": unknown key '" + key + "'");
    }
  }
  for (const auto& [key, value] : opts.overrides) {
    if (!known_keys().count(key)) errors.push_back("override: unknown key '" + key + "'");
    kv[key] = {value, 0};
  }
  auto base_for = [&](const std::string& key) {
    return opts.overrides.count(key) ? fs::path{} : opts.base_dir;
  };

  PipelineConfig cfg;
  Reader rd(kv, errors);
  if (auto v = rd.raw("input.cube_dir")) cfg.input_cube_dir = resolve(base_for("input.cube_dir"), *v);
  if (auto v = rd.raw("input.rasters")) {
    for (const auto& p : split_list(*v)) cfg.input_rasters.push_back(resolve(base_for("input.rasters"), p));
  }
  rd.get_list("input.years", cfg.input_years);
  if (auto v = rd.raw("output.dir")) cfg.output_dir = resolve(base_for("output.dir"), *v);

  rd.get("coreg.enabled", cfg.run_coregister);
  rd.get("coreg.window_radius", cfg.coreg.window_radius);
  rd.get("coreg.reference_index", cfg.coreg.reference_index);
  rd.get("coreg.patch_size", cfg.coreg.patch_size);
  rd.get("coreg.patch_overlap", cfg.coreg.patch_overlap);

  rd.get("tv.enabled", cfg.run_denoise);
  rd.get("tv.lambda_temp", cfg.tv.lambda_temp);
  rd.get("tv.lambda_spat", cfg.tv.lambda_spat);
  rd.get("tv.max_iters", cfg.tv.max_iters);
  rd.get("tv.rel_tol", cfg.tv.rel_tol);
  rd.get("tv.tau", cfg.tv.tau);
  rd.get("tv.sigma", cfg.tv.sigma);
  rd.get("tv.log_every", cfg.tv.log_every);

  rd.get("delta.loss_threshold", cfg.delta.loss_threshold);
  rd.get("delta.kernel", cfg.delta.kernel);
  rd.get("delta.min_area_m2", cfg.delta.min_area_m2);
  if (auto v = rd.raw("delta.forest_mask")) cfg.forest_mask_path = resolve(base_for("delta.forest_mask"), *v);

  if (auto v = rd.raw("metrics.reference_polygons")) cfg.reference_polygons = resolve(base_for("metrics.reference_polygons"), *v);
  if (auto v = rd.raw("metrics.plots")) cfg.plots = resolve(base_for("metrics.plots"), *v);
  rd.get("metrics.height_radius_m", cfg.height_radius_m);
  {
    std::vector<int> period;
    rd.get_list("metrics.period", period);
    if (rd.raw("metrics.period")) {
      if (period.size() == 2) {
        cfg.plot_period = std::make_pair(period[0], period[1]);
      } else {
        errors.push_back("metrics.period: expected two years 'lo,hi'");
      }
    }
  }
  rd.get_list("metrics.size_bins", cfg.size_bins.edges);

  rd.get("run.workers", cfg.workers);
  rd.get("run.tile_size", cfg.tile_size);

  // Invariants, all collected.
  auto check = [&](bool ok, const std::string& msg) {
    if (!ok) errors.push_back(msg);
  };
  const bool has_cube = !cfg.input_cube_dir.empty();
  const bool has_rasters = !cfg.input_rasters.empty();
  if (opts.require_io || has_cube || has_rasters) {
    check(has_cube != has_rasters, "input: set exactly one of input.cube_dir or input.rasters");
  }
  check(cfg.input_years.empty() || cfg.input_years.size() == cfg.input_rasters.size(),
        "input.years: must list one year per raster");
  for (std::size_t i = 1; i < cfg.input_years.size(); ++i) {
    check(cfg.input_years[i] > cfg.input_years[i - 1], "input.years: must be strictly increasing");
  }
  if (opts.require_io) check(!cfg.output_dir.empty(), "output.dir: required");
  check(cfg.coreg.window_radius >= 0, "coreg.window_radius: must be >= 0");
  check(cfg.coreg.patch_overlap >= 2 * cfg.coreg.window_radius,
        "coreg.patch_overlap: must be >= 2 * coreg.window_radius");
  check(cfg.coreg.patch_size > 2 * cfg.coreg.patch_overlap,
        "coreg.patch_size: must be > 2 * coreg.patch_overlap");
  check(cfg.tv.lambda_temp >= 0.0, "tv.lambda_temp: must be >= 0");
  check(cfg.tv.lambda_spat >= 0.0, "tv.lambda_spat: must be >= 0");
  check(cfg.tv.tau > 0.0, "tv.tau: must be > 0");
  check(cfg.tv.sigma > 0.0, "tv.sigma: must be > 0");
  check(cfg.tv.tau * cfg.tv.sigma * 12.0 <= 1.0 + 1e-12, "tv.tau, tv.sigma: need tau * sigma <= 1/12");
  check(cfg.tv.max_iters >= 0, "tv.max_iters: must be >= 0");
  check(cfg.tv.rel_tol >= 0.0, "tv.rel_tol: must be >= 0");
  check(cfg.delta.loss_threshold > 0.0, "delta.loss_threshold: must be > 0");
  check(cfg.delta.kernel >= 1 && cfg.delta.kernel % 2 == 1, "delta.kernel: must be odd and >= 1");
  check(cfg.delta.min_area_m2 >= 0.0, "delta.min_area_m2: must be >= 0");
  check(cfg.height_radius_m > 0.0, "metrics.height_radius_m: must be > 0");
  try {
    cfg.size_bins.validate();
  } catch (const MetricsError& e) {
    errors.push_back(std::string("metrics.size_bins: ") + e.what());
  }
  check(cfg.workers >= 1, "run.workers: must be >= 1");

  if (opts.check_paths) {
    auto exists = [&](const fs::path& p, const char* key) {
      if (!p.empty() && !fs::exists(p)) errors.push_back(std::string(key) + ": path not found: " + p.string());
    };
    exists(cfg.input_cube_dir, "input.cube_dir");
    for (const auto& r : cfg.input_rasters) {
      fs::path hdr = r;
      if (hdr.extension() != ".hdr") hdr.replace_extension(".hdr");
      exists(hdr, "input.rasters");
    }
    exists(cfg.forest_mask_path, "delta.forest_mask");
    exists(cfg.reference_polygons, "metrics.reference_polygons");
    exists(cfg.plots, "metrics.plots");
  }

  if (!errors.empty()) throw ConfigError(std::move(errors));
  return cfg;
}

PipelineConfig validate_config(const fs::path& path, ConfigOptions opts) {
  std::ifstream in(path);
  if (!in) throw ConfigError({"cannot read config file " + path.string()});
  std::stringstream ss;
  ss << in.rdbuf();
  opts.base_dir = path.parent_path();
  return parse_config(ss.str(), opts);
}

}  // namespace canopy
