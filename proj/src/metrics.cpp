#include "canopy/metrics.hpp"

#include "canopy/geometry.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <map>
#include <numeric>
#include <set>
#include <sstream>

namespace canopy {

Metric ratio(double num, double den) {
  if (den == 0.0) return std::nullopt;
  return num / den;
}

Metric f1_score(Metric p, Metric r) {
  if (!p || !r) return std::nullopt;
  if (*p + *r == 0.0) return 0.0;
  return 2.0 * *p * *r / (*p + *r);
}

void SizeBins::validate() const {
  if (edges.empty()) throw MetricsError("size bins: need at least one edge");
  for (std::size_t i = 0; i < edges.size(); ++i) {
    if (!(edges[i] > 0.0)) throw MetricsError("size bins: edges must be positive");
    if (i > 0 && !(edges[i] > edges[i - 1])) throw MetricsError("size bins: edges must increase");
  }
}

std::optional<std::size_t> SizeBins::bin_of(double area) const {
  if (area < edges.front()) return std::nullopt;
  const auto it = std::upper_bound(edges.begin(), edges.end(), area);
  return static_cast<std::size_t>(it - edges.begin()) - 1;
}

double SizeBins::upper(std::size_t i) const {
  return i + 1 < edges.size() ? edges[i + 1] : std::numeric_limits<double>::infinity();
}

namespace {

std::int64_t count_and(const Mask& a, const Mask& b) { return ((a != 0) && (b != 0)).count(); }
std::int64_t count_set(const Mask& a) { return (a != 0).count(); }

PolygonSet in_bin(const PolygonSet& set, const SizeBins& bins, std::size_t b) {
  PolygonSet out;
  for (const auto& p : set) {
    if (bins.bin_of(p.area_m2()) == b) out.push_back(p);
  }
  return out;
}

void finalize(AreaMetrics& m) {
  m.precision = ratio(m.overlap_area, m.predicted_area);
  m.recall = ratio(m.overlap_area, m.reference_area);
  m.f1 = f1_score(m.precision, m.recall);
  m.iou = ratio(m.overlap_area, m.union_area);
  for (auto& b : m.bins) {
    b.precision = ratio(b.predicted_overlap_area, b.predicted_area);
    b.recall = ratio(b.reference_overlap_area, b.reference_area);
  }
}

}  // namespace

AreaMetrics area_metrics(const PolygonSet& predicted, const PolygonSet& reference,
                         const GridMeta& grid, const SizeBins& bins) {
  grid.validate();
  bins.validate();
  const double px = grid.pixel_area();
  const Mask P = rasterize(predicted, grid);
  const Mask R = rasterize(reference, grid);
  AreaMetrics m;
  m.pixel_size = grid.pixel_size;
  m.overlap_area = static_cast<double>(count_and(P, R)) * px;
  m.predicted_area = static_cast<double>(count_set(P)) * px;
  m.reference_area = static_cast<double>(count_set(R)) * px;
  m.union_area = static_cast<double>(((P != 0) || (R != 0)).count()) * px;
  for (std::size_t b = 0; b < bins.size(); ++b) {
    BinMetrics bm;
    bm.lower = bins.edges[b];
    bm.upper = bins.upper(b);
    const Mask Pb = rasterize(in_bin(predicted, bins, b), grid);
    const Mask Rb = rasterize(in_bin(reference, bins, b), grid);
    bm.predicted_area = static_cast<double>(count_set(Pb)) * px;
    bm.predicted_overlap_area = static_cast<double>(count_and(Pb, R)) * px;
    bm.reference_area = static_cast<double>(count_set(Rb)) * px;
    bm.reference_overlap_area = static_cast<double>(count_and(P, Rb)) * px;
    m.bins.push_back(bm);
  }
  finalize(m);
  return m;
}

AreaMetrics area_metrics_by_year(const PolygonSet& predicted, const PolygonSet& reference,
                                 const GridMeta& grid, const SizeBins& bins) {
  std::set<std::optional<int>> years;
  for (const auto& p : predicted) years.insert(p.year());
  for (const auto& p : reference) years.insert(p.year());
  AreaMetrics total;
  total.pixel_size = grid.pixel_size;
  for (std::size_t b = 0; b < bins.size(); ++b) {
    total.bins.push_back({bins.edges[b], bins.upper(b), 0, 0, 0, 0, {}, {}});
  }
  for (const auto& y : years) {
    auto pick = [&](const PolygonSet& s) {
      PolygonSet out;
      for (const auto& p : s)
        if (p.year() == y) out.push_back(p);
      return out;
    };
    const AreaMetrics m = area_metrics(pick(predicted), pick(reference), grid, bins);
    total.overlap_area += m.overlap_area;
    total.predicted_area += m.predicted_area;
    total.reference_area += m.reference_area;
    total.union_area += m.union_area;
    for (std::size_t b = 0; b < bins.size(); ++b) {
      total.bins[b].predicted_area += m.bins[b].predicted_area;
      total.bins[b].predicted_overlap_area += m.bins[b].predicted_overlap_area;
      total.bins[b].reference_area += m.bins[b].reference_area;
      total.bins[b].reference_overlap_area += m.bins[b].reference_overlap_area;
    }
  }
  finalize(total);
  return total;
}

std::vector<PrPoint> pr_curve(const PolygonSet& predicted, const PolygonSet& reference,
                              const GridMeta& grid) {
  grid.validate();
  const Mask R = rasterize(reference, grid);
  const double ref_count = static_cast<double>(count_set(R));
  std::vector<std::size_t> order(predicted.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return predicted[a].area_m2() < predicted[b].area_m2();
  });
  Mask covered = Mask::Zero(grid.height, grid.width);
  std::int64_t pred_count = 0, overlap = 0;
  std::vector<PrPoint> curve;
  for (std::size_t k = 0; k < order.size(); ++k) {
    for (const auto idx : covered_pixels(predicted[order[k]], grid)) {
      auto& c = covered.data()[idx];
      if (c) continue;
      c = 1;
      ++pred_count;
      if (R.data()[idx]) ++overlap;
    }
    curve.push_back({k + 1, predicted[order[k]].area_m2(),
                     ratio(static_cast<double>(overlap), ref_count),
                     ratio(static_cast<double>(overlap), static_cast<double>(pred_count))});
  }
  return curve;
}

void PlotRecord::validate() const {
  if (!(radius_m > 0.0)) throw MetricsError("plot " + plot_id + ": radius must be > 0");
  if (n_disturbed < 0 || n_disturbed > n_trees_first) {
    throw MetricsError("plot " + plot_id + ": need 0 <= n_disturbed <= n_trees");
  }
}

int magnitude_class(int n_disturbed, int n_trees) {
  if (n_trees <= 0) throw MetricsError("magnitude_class: n_trees must be > 0");
  // Integer arithmetic keeps exact multiples of 10% on their lower edge.
  return std::min(9, static_cast<int>((10LL * n_disturbed) / n_trees));
}

PlotMetrics plot_metrics(const std::vector<PlotRecord>& plots, const PolygonSet& predicted,
                         int year_lo, int year_hi) {
  PlotMetrics m;
  for (int c = 0; c < 10; ++c) m.magnitude.push_back({10 * c, 10 * (c + 1), 0, 0, {}});
  std::vector<const Polygon*> in_period;
  for (const auto& p : predicted) {
    if (p.year() && *p.year() > year_lo && *p.year() <= year_hi) in_period.push_back(&p);
  }
  for (const auto& plot : plots) {
    plot.validate();
    if (plot.n_trees_first == 0) {
      ++m.excluded_no_trees;
      continue;
    }
    const Point center{plot.x, plot.y};
    const bool hit = std::any_of(in_period.begin(), in_period.end(), [&](const Polygon* p) {
      return intersects_disc(*p, center, plot.radius_m);
    });
    const bool disturbed = plot.n_disturbed >= 1;
    if (disturbed && hit) ++m.tp;
    if (disturbed && !hit) ++m.fn;
    if (!disturbed && hit) ++m.fp;
    if (!disturbed && !hit) ++m.tn;
    if (disturbed) {
      auto& cls = m.magnitude[static_cast<std::size_t>(magnitude_class(plot.n_disturbed, plot.n_trees_first))];
      ++cls.disturbed;
      if (hit) ++cls.detected;
    }
  }
  m.precision = ratio(m.tp, m.tp + m.fp);
  m.recall = ratio(m.tp, m.tp + m.fn);
  m.f1 = f1_score(m.precision, m.recall);
  for (auto& c : m.magnitude) c.recall = ratio(c.detected, c.disturbed);
  return m;
}

HeightStats height_stats(const std::vector<double>& pred, const std::vector<double>& ref) {
  HeightStats s;
  s.n = static_cast<int>(pred.size());
  if (pred.empty()) return s;
  double abs_sum = 0.0, ss_res = 0.0;
  const double mean_ref = std::accumulate(ref.begin(), ref.end(), 0.0) / static_cast<double>(ref.size());
  double ss_tot = 0.0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    abs_sum += std::abs(pred[i] - ref[i]);
    ss_res += (ref[i] - pred[i]) * (ref[i] - pred[i]);
    ss_tot += (ref[i] - mean_ref) * (ref[i] - mean_ref);
  }
  s.mae = abs_sum / static_cast<double>(pred.size());
  if (ss_tot > 0.0) s.r2 = 1.0 - ss_res / ss_tot;
  return s;
}

double percentile(std::vector<double> v, double q) {
  if (v.empty()) throw MetricsError("percentile of empty set");
  std::sort(v.begin(), v.end());
  const double pos = q * static_cast<double>(v.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const auto hi = std::min(lo + 1, v.size() - 1);
  return v[lo] + (pos - static_cast<double>(lo)) * (v[hi] - v[lo]);
}

namespace {

Metric sample_sd(const std::vector<double>& v) {
  if (v.size() < 2) return std::nullopt;
  const double mean = std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
  double acc = 0.0;
  for (double x : v) acc += (x - mean) * (x - mean);
  return std::sqrt(acc / static_cast<double>(v.size() - 1));
}

}  // namespace

HeightValidation height_validation(const HeightCube& cube, const std::vector<PlotRecord>& plots,
                                   double radius_m) {
  if (!(radius_m > 0.0)) throw MetricsError("height_validation: radius must be > 0");
  const GridMeta& g = cube.meta();
  HeightValidation out;
  for (const auto& plot : plots) {
    const auto t = cube.index_of_year(plot.height_year);
    if (!t) {
      ++out.excluded_no_year;
      continue;
    }
    const double col_f = (plot.x - g.origin_x) / g.pixel_size;
    const double row_f = (g.origin_y - plot.y) / g.pixel_size;
    if (col_f < 0.0 || row_f < 0.0 || col_f > g.width || row_f > g.height) {
      ++out.excluded_outside;
      continue;
    }
    const double rpx = radius_m / g.pixel_size;
    const int r0 = std::max(0, static_cast<int>(std::floor(row_f - rpx)));
    const int r1 = std::min(g.height - 1, static_cast<int>(std::ceil(row_f + rpx)));
    const int c0 = std::max(0, static_cast<int>(std::floor(col_f - rpx)));
    const int c1 = std::min(g.width - 1, static_cast<int>(std::ceil(col_f + rpx)));
    const ImageF& layer = cube.layer(*t);
    std::optional<float> best;
    for (int r = r0; r <= r1; ++r) {
      for (int c = c0; c <= c1; ++c) {
        const double dx = g.center_x(c) - plot.x, dy = g.center_y(r) - plot.y;
        if (dx * dx + dy * dy > radius_m * radius_m) continue;
        const float v = layer(r, c);
        if (v == g.nodata) continue;
        if (!best || v > *best) best = v;
      }
    }
    if (!best) {
      ++out.excluded_nodata;
      continue;
    }
    out.samples.push_back({plot.plot_id, plot.height_year, *best, plot.tallest_tree_m});
  }

  std::vector<double> pred, ref;
  std::map<int, std::pair<std::vector<double>, std::vector<double>>> by_year;
  for (const auto& s : out.samples) {
    pred.push_back(s.predicted);
    ref.push_back(s.reference);
    by_year[s.year].first.push_back(s.predicted);
    by_year[s.year].second.push_back(s.reference);
  }
  out.pooled = height_stats(pred, ref);
  std::vector<double> maes, r2s;
  for (const auto& [year, pr] : by_year) {
    const HeightStats s = height_stats(pr.first, pr.second);
    out.per_year.emplace_back(year, s);
    if (s.mae) maes.push_back(*s.mae);
    if (s.r2) r2s.push_back(*s.r2);
  }
  out.mae_sd = sample_sd(maes);
  out.r2_sd = sample_sd(r2s);

  if (!ref.empty()) {
    const double top = *std::max_element(ref.begin(), ref.end());
    const int n_bins = static_cast<int>(std::floor(top / 5.0)) + 1;
    for (int b = 0; b < n_bins; ++b) {
      HeightBin bin;
      bin.lower = 5.0 * b;
      bin.upper = 5.0 * (b + 1);
      std::vector<double> diffs;
      for (std::size_t i = 0; i < ref.size(); ++i) {
        if (ref[i] >= bin.lower && ref[i] < bin.upper) diffs.push_back(pred[i] - ref[i]);
      }
      bin.n = static_cast<int>(diffs.size());
      if (!diffs.empty()) {
        bin.p5 = percentile(diffs, 0.05);
        bin.q1 = percentile(diffs, 0.25);
        bin.median = percentile(diffs, 0.5);
        bin.q3 = percentile(diffs, 0.75);
        bin.p95 = percentile(diffs, 0.95);
      }
      out.bins.push_back(bin);
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// CSV

namespace {

std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> out;
  std::string cell;
  std::istringstream ss(line);
  while (std::getline(ss, cell, ',')) {
    const auto b = cell.find_first_not_of(" \t\r");
    const auto e = cell.find_last_not_of(" \t\r");
    out.push_back(b == std::string::npos ? std::string{} : cell.substr(b, e - b + 1));
  }
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

std::ofstream open_out(const std::filesystem::path& path) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw MetricsError("cannot write " + path.string());
  out << std::setprecision(17);
  return out;
}

std::string na(const Metric& m) {
  if (!m) return "NA";
  std::ostringstream ss;
  ss << std::setprecision(17) << *m;
  return ss.str();
}

}  // namespace

std::string format_metric(const Metric& m) {
  if (!m) return "undefined";
  std::ostringstream ss;
  ss << std::fixed << std::setprecision(4) << *m;
  return ss.str();
}

std::vector<PlotRecord> read_plots_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw MetricsError("cannot open " + path.string());
  std::string line;
  if (!std::getline(in, line)) throw MetricsError(path.string() + ": empty plots file");
  const auto header = split_csv(line);
  const std::vector<std::string> required{"plot_id", "x", "y", "radius_m", "year_first",
                                          "year_second", "n_trees", "n_disturbed",
                                          "tallest_tree_m", "height_year"};
  std::map<std::string, std::size_t> col;
  for (std::size_t i = 0; i < header.size(); ++i) col[header[i]] = i;
  for (const auto& k : required) {
    if (!col.count(k)) throw MetricsError(path.string() + ": missing column '" + k + "'");
  }
  std::vector<PlotRecord> plots;
  int lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    const auto cells = split_csv(line);
    if (cells.size() != header.size()) {
      throw MetricsError(path.string() + ":" + std::to_string(lineno) + ": wrong column count");
    }
    try {
      PlotRecord p;
      p.plot_id = cells[col["plot_id"]];
      p.x = std::stod(cells[col["x"]]);
      p.y = std::stod(cells[col["y"]]);
      p.radius_m = std::stod(cells[col["radius_m"]]);
      p.year_first = std::stoi(cells[col["year_first"]]);
      p.year_second = std::stoi(cells[col["year_second"]]);
      p.n_trees_first = std::stoi(cells[col["n_trees"]]);
      p.n_disturbed = std::stoi(cells[col["n_disturbed"]]);
      p.tallest_tree_m = std::stod(cells[col["tallest_tree_m"]]);
      p.height_year = std::stoi(cells[col["height_year"]]);
      p.validate();
      plots.push_back(std::move(p));
    } catch (const std::logic_error& e) {
      throw MetricsError(path.string() + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
  return plots;
}

void write_area_metrics_csv(const AreaMetrics& m, const std::filesystem::path& path) {
  auto out = open_out(path);
  out << "scope,lower_m2,upper_m2,predicted_area_m2,reference_area_m2,predicted_overlap_m2,"
         "reference_overlap_m2,precision,recall,f1,iou\n";
  out << "overall,0,inf," << m.predicted_area << "," << m.reference_area << "," << m.overlap_area
      << "," << m.overlap_area << "," << na(m.precision) << "," << na(m.recall) << "," << na(m.f1)
      << "," << na(m.iou) << "\n";
  for (const auto& b : m.bins) {
    out << "bin," << b.lower << "," << (std::isinf(b.upper) ? std::string("inf") : na(b.upper))
        << "," << b.predicted_area << "," << b.reference_area << "," << b.predicted_overlap_area
        << "," << b.reference_overlap_area << "," << na(b.precision) << "," << na(b.recall)
        << ",NA,NA\n";
  }
}

void write_pr_curve_csv(const std::vector<PrPoint>& curve, const std::filesystem::path& path) {
  auto out = open_out(path);
  out << "k,area_m2,recall,precision\n";
  for (const auto& p : curve) {
    out << p.k << "," << p.area_m2 << "," << na(p.recall) << "," << na(p.precision) << "\n";
  }
}

void write_plot_metrics_csv(const PlotMetrics& m, const std::filesystem::path& path) {
  auto out = open_out(path);
  out << "tp,tn,fp,fn,precision,recall,f1,excluded_no_trees\n";
  out << m.tp << "," << m.tn << "," << m.fp << "," << m.fn << "," << na(m.precision) << ","
      << na(m.recall) << "," << na(m.f1) << "," << m.excluded_no_trees << "\n";
  auto mag = path;
  mag.replace_filename(path.stem().string() + "_magnitude.csv");
  auto out2 = open_out(mag);
  out2 << "lower_pct,upper_pct,disturbed,detected,recall\n";
  for (const auto& c : m.magnitude) {
    out2 << c.lower_pct << "," << c.upper_pct << "," << c.disturbed << "," << c.detected << ","
         << na(c.recall) << "\n";
  }
}

void write_height_validation_csv(const HeightValidation& v, const std::filesystem::path& dir) {
  {
    auto out = open_out(dir / "height_samples.csv");
    out << "plot_id,year,predicted_m,reference_m\n";
    for (const auto& s : v.samples) {
      out << s.plot_id << "," << s.year << "," << s.predicted << "," << s.reference << "\n";
    }
  }
  {
    auto out = open_out(dir / "height_by_year.csv");
    out << "year,n,mae,r2\n";
    out << "pooled," << v.pooled.n << "," << na(v.pooled.mae) << "," << na(v.pooled.r2) << "\n";
    for (const auto& [year, s] : v.per_year) {
      out << year << "," << s.n << "," << na(s.mae) << "," << na(s.r2) << "\n";
    }
    out << "sd_across_years,," << na(v.mae_sd) << "," << na(v.r2_sd) << "\n";
  }
  {
    auto out = open_out(dir / "height_bins.csv");
    out << "lower_m,upper_m,n,p5,q1,median,q3,p95\n";
    for (const auto& b : v.bins) {
      out << b.lower << "," << b.upper << "," << b.n << "," << na(b.p5) << "," << na(b.q1) << ","
          << na(b.median) << "," << na(b.q3) << "," << na(b.p95) << "\n";
    }
  }
}

void print_summary(std::ostream& os, const AreaMetrics& m) {
  os << "area-based metrics (raster " << m.pixel_size << " m)\n"
     << "  predicted " << m.predicted_area << " m2, reference " << m.reference_area
     << " m2, overlap " << m.overlap_area << " m2\n"
     << "  precision " << format_metric(m.precision) << "  recall " << format_metric(m.recall)
     << "  f1 " << format_metric(m.f1) << "  iou " << format_metric(m.iou) << "\n";
  for (const auto& b : m.bins) {
    os << "  bin [" << b.lower << ", " << b.upper << ") m2: precision " << format_metric(b.precision)
       << "  recall " << format_metric(b.recall) << "\n";
  }
}

void print_summary(std::ostream& os, const PlotMetrics& m) {
  os << "plot-based metrics\n"
     << "  TP " << m.tp << "  FN " << m.fn << "  FP " << m.fp << "  TN " << m.tn << "\n"
     << "  precision " << format_metric(m.precision) << "  recall " << format_metric(m.recall)
     << "  f1 " << format_metric(m.f1) << "\n";
  if (m.excluded_no_trees > 0) os << "  warning: " << m.excluded_no_trees << " plots without trees excluded\n";
}

void print_summary(std::ostream& os, const HeightValidation& v) {
  os << "height validation: " << v.pooled.n << " plots, MAE " << format_metric(v.pooled.mae)
     << " m, r2 " << format_metric(v.pooled.r2) << "\n";
  for (const auto& [year, s] : v.per_year) {
    os << "  " << year << ": n " << s.n << "  MAE " << format_metric(s.mae) << "  r2 "
       << format_metric(s.r2) << "\n";
  }
  os << "  SD across years: MAE " << format_metric(v.mae_sd) << "  r2 " << format_metric(v.r2_sd)
     << "\n";
  const int excluded = v.excluded_outside + v.excluded_no_year + v.excluded_nodata;
  if (excluded > 0) {
    os << "  excluded: " << v.excluded_outside << " outside extent, " << v.excluded_no_year
       << " without matching year, " << v.excluded_nodata << " without data\n";
  }
}

}  // namespace canopy
