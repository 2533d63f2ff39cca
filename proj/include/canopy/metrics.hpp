#pragma once

#include "canopy/raster.hpp"

#include <filesystem>
#include <optional>
#include <ostream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace canopy {

class MetricsError : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

/// A ratio that is undefined (no value) when its denominator is zero.
using Metric = std::optional<double>;

Metric ratio(double num, double den);
/// Harmonic mean; 0 when both inputs are 0, undefined if either is undefined.
Metric f1_score(Metric precision, Metric recall);

struct SizeBins {
  /// Lower edges in m^2; bin i spans [edges[i], edges[i+1]), the last is open.
  std::vector<double> edges{10.0, 100.0, 1000.0, 10000.0};

  void validate() const;
  std::size_t size() const { return edges.size(); }
  std::optional<std::size_t> bin_of(double area_m2) const;
  double upper(std::size_t i) const;
};

struct BinMetrics {
  double lower = 0.0;
  double upper = 0.0;
  double predicted_area = 0.0;          // predicted polygons in the bin
  double predicted_overlap_area = 0.0;  // ... intersected with all reference
  double reference_area = 0.0;          // reference polygons in the bin
  double reference_overlap_area = 0.0;  // ... intersected with all predicted
  Metric precision;
  Metric recall;
};

struct AreaMetrics {
  double pixel_size = 0.0;  // rasterization grid
  double overlap_area = 0.0;
  double predicted_area = 0.0;
  double reference_area = 0.0;
  double union_area = 0.0;
  Metric precision;
  Metric recall;
  Metric f1;
  Metric iou;
  std::vector<BinMetrics> bins;
};

/// Areas by pixel-center rasterization of both sets on `grid`.
AreaMetrics area_metrics(const PolygonSet& predicted, const PolygonSet& reference,
                         const GridMeta& grid, const SizeBins& bins = {});

/// Same as area_metrics, but each year is rasterized separately and the
/// overlap/predicted/reference areas are summed across years.
AreaMetrics area_metrics_by_year(const PolygonSet& predicted, const PolygonSet& reference,
                                 const GridMeta& grid, const SizeBins& bins = {});

struct PrPoint {
  std::size_t k = 0;     // number of polygons included
  double area_m2 = 0.0;  // area of the k-th polygon
  Metric recall;
  Metric precision;
};

/// Predicted polygons ranked by ascending area (ties by input order); point k
/// evaluates the union of the first k.
std::vector<PrPoint> pr_curve(const PolygonSet& predicted, const PolygonSet& reference,
                              const GridMeta& grid);

struct PlotRecord {
  std::string plot_id;
  double x = 0.0;
  double y = 0.0;
  double radius_m = 15.0;
  int year_first = 0;
  int year_second = 0;
  int n_trees_first = 0;
  int n_disturbed = 0;
  double tallest_tree_m = 0.0;
  int height_year = 0;

  void validate() const;
};

struct MagnitudeClass {
  int lower_pct = 0;
  int upper_pct = 0;
  int disturbed = 0;
  int detected = 0;
  Metric recall;
};

struct PlotMetrics {
  int tp = 0, tn = 0, fp = 0, fn = 0;
  int excluded_no_trees = 0;
  Metric precision;
  Metric recall;
  Metric f1;
  std::vector<MagnitudeClass> magnitude;  // ten 10% classes, the last closed at 100%
};

/// Magnitude class index (0..9) of n_disturbed / n_trees.
int magnitude_class(int n_disturbed, int n_trees);

/// A plot is detected when a predicted polygon dated in (year_lo, year_hi]
/// overlaps its disc.
PlotMetrics plot_metrics(const std::vector<PlotRecord>& plots, const PolygonSet& predicted,
                         int year_lo, int year_hi);

struct HeightSample {
  std::string plot_id;
  int year = 0;
  double predicted = 0.0;
  double reference = 0.0;
};

struct HeightStats {
  int n = 0;
  Metric mae;
  Metric r2;
};

struct HeightBin {
  double lower = 0.0;
  double upper = 0.0;
  int n = 0;
  // Distribution of predicted - reference.
  Metric p5, q1, median, q3, p95;
};

struct HeightValidation {
  std::vector<HeightSample> samples;
  HeightStats pooled;
  std::vector<std::pair<int, HeightStats>> per_year;
  Metric mae_sd;  // sample standard deviation across years
  Metric r2_sd;
  std::vector<HeightBin> bins;  // 5 m reference-height bins
  int excluded_outside = 0;
  int excluded_no_year = 0;
  int excluded_nodata = 0;
};

HeightStats height_stats(const std::vector<double>& predicted, const std::vector<double>& reference);

/// Linear-interpolation percentile (q in [0, 1]) of unsorted values.
double percentile(std::vector<double> values, double q);

/// Prediction per plot = max over non-nodata pixels whose centers are within
/// radius_m of the plot center, in the layer of the plot's height_year.
HeightValidation height_validation(const HeightCube& cube, const std::vector<PlotRecord>& plots,
                                   double radius_m = 18.0);

// CSV I/O.
std::vector<PlotRecord> read_plots_csv(const std::filesystem::path& path);
void write_area_metrics_csv(const AreaMetrics& m, const std::filesystem::path& path);
void write_pr_curve_csv(const std::vector<PrPoint>& curve, const std::filesystem::path& path);
void write_plot_metrics_csv(const PlotMetrics& m, const std::filesystem::path& path);
void write_height_validation_csv(const HeightValidation& v, const std::filesystem::path& dir);
void print_summary(std::ostream& os, const AreaMetrics& m);
void print_summary(std::ostream& os, const PlotMetrics& m);
void print_summary(std::ostream& os, const HeightValidation& v);

std::string format_metric(const Metric& m);

}  // namespace canopy
