#include "canopy/delta.hpp"

#include "canopy/parallel.hpp"

#include <deque>

namespace canopy {

void DeltaConfig::validate() const {
  if (!(loss_threshold > 0.0)) throw DeltaError("delta: loss_threshold must be > 0");
  if (!(min_area_m2 >= 0.0)) throw DeltaError("delta: min_area_m2 must be >= 0");
  if (kernel < 1 || kernel % 2 == 0) throw DeltaError("delta: kernel must be odd and >= 1");
}

DisturbanceMask height_loss_mask(const HeightRaster& before, const HeightRaster& after,
                                 double threshold_m, int year) {
  require_compatible(before.meta(), after.meta(), "height_loss_mask");
  const auto& b = before.values();
  const auto& a = after.values();
  const Mask bits = ((b != before.meta().nodata) && (a != after.meta().nodata) &&
                     ((b.cast<double>() - a.cast<double>()) >= threshold_m))
                        .cast<std::uint8_t>();
  return DisturbanceMask(before.meta(), year, bits);
}

namespace {

// Counts of set pixels in a centered window of `half` along one axis; the
// window is clipped to the grid.
template <bool Rows>
Image<int> window_counts(const Mask& m, int half) {
  const Eigen::Index n_lines = Rows ? m.rows() : m.cols();
  const Eigen::Index len = Rows ? m.cols() : m.rows();
  Image<int> out(m.rows(), m.cols());
  std::vector<int> prefix(static_cast<std::size_t>(len) + 1);
  for (Eigen::Index l = 0; l < n_lines; ++l) {
    prefix[0] = 0;
    for (Eigen::Index i = 0; i < len; ++i) {
      prefix[i + 1] = prefix[i] + ((Rows ? m(l, i) : m(i, l)) != 0 ? 1 : 0);
    }
    for (Eigen::Index i = 0; i < len; ++i) {
      const Eigen::Index lo = std::max<Eigen::Index>(0, i - half);
      const Eigen::Index hi = std::min<Eigen::Index>(len, i + half + 1);
      (Rows ? out(l, i) : out(i, l)) = prefix[hi] - prefix[lo];
    }
  }
  return out;
}

void check_kernel(int kernel) {
  if (kernel < 1 || kernel % 2 == 0) throw DeltaError("kernel must be odd and >= 1");
}

}  // namespace

Mask erode(const Mask& mask, int kernel) {
  check_kernel(kernel);
  const int half = kernel / 2;
  // A pixel survives only if the full window (including out-of-grid) is set.
  const Mask rows = (window_counts<true>(mask, half) == kernel).cast<std::uint8_t>();
  return (window_counts<false>(rows, half) == kernel).cast<std::uint8_t>();
}

Mask dilate(const Mask& mask, int kernel) {
  check_kernel(kernel);
  const int half = kernel / 2;
  const Mask rows = (window_counts<true>(mask, half) > 0).cast<std::uint8_t>();
  return (window_counts<false>(rows, half) > 0).cast<std::uint8_t>();
}

DisturbanceMask opening(const DisturbanceMask& mask, int kernel) {
  return DisturbanceMask(mask.meta, mask.year, dilate(erode(mask.bits, kernel), kernel));
}

LabeledRegions label_regions(const DisturbanceMask& mask) {
  const int H = mask.meta.height, W = mask.meta.width;
  LabeledRegions out;
  out.meta = mask.meta;
  out.labels = Image<std::int32_t>::Zero(H, W);
  std::deque<std::pair<int, int>> queue;
  for (int r = 0; r < H; ++r) {
    for (int c = 0; c < W; ++c) {
      if (!mask.bits(r, c) || out.labels(r, c) != 0) continue;
      const auto label = static_cast<std::int32_t>(out.pixel_counts.size() + 1);
      std::int64_t count = 0;
      out.labels(r, c) = label;
      queue.emplace_back(r, c);
      while (!queue.empty()) {
        const auto [pr, pc] = queue.front();
        queue.pop_front();
        ++count;
        for (int dr = -1; dr <= 1; ++dr) {
          for (int dc = -1; dc <= 1; ++dc) {
            const int nr = pr + dr, nc = pc + dc;
            if (nr < 0 || nr >= H || nc < 0 || nc >= W) continue;
            if (mask.bits(nr, nc) && out.labels(nr, nc) == 0) {
              out.labels(nr, nc) = label;
              queue.emplace_back(nr, nc);
            }
          }
        }
      }
      out.pixel_counts.push_back(count);
    }
  }
  return out;
}

PolygonSet polygonize(const LabeledRegions& regions, double min_area_m2, std::optional<int> year,
                      const std::string& tag) {
  std::vector<bool> keep(regions.region_count());
  const double px_area = regions.meta.pixel_area();
  for (std::size_t i = 0; i < keep.size(); ++i) {
    keep[i] = static_cast<double>(regions.pixel_counts[i]) * px_area >= min_area_m2;
  }
  return polygonize_selected(regions, keep, year, tag);
}

PolygonSet pair_to_polygons(const HeightRaster& before, const HeightRaster& after, int after_year,
                            const DeltaConfig& cfg) {
  const DisturbanceMask raw = height_loss_mask(before, after, cfg.loss_threshold, after_year);
  const LabeledRegions regions = label_regions(opening(raw, cfg.kernel));
  const double px_area = regions.meta.pixel_area();
  std::vector<bool> keep(regions.region_count());
  // Area filter first, then the forest-mask filter.
  for (std::size_t i = 0; i < keep.size(); ++i) {
    keep[i] = static_cast<double>(regions.pixel_counts[i]) * px_area >= cfg.min_area_m2;
  }
  if (cfg.forest_mask) {
    const Mask& forest = *cfg.forest_mask;
    if (forest.rows() != regions.labels.rows() || forest.cols() != regions.labels.cols()) {
      throw DeltaError("forest mask shape does not match the cube grid");
    }
    std::vector<std::int64_t> inside(keep.size(), 0);
    for (Eigen::Index i = 0; i < regions.labels.size(); ++i) {
      const auto l = regions.labels.data()[i];
      if (l > 0 && forest.data()[i]) ++inside[static_cast<std::size_t>(l - 1)];
    }
    for (std::size_t i = 0; i < keep.size(); ++i) {
      keep[i] = keep[i] && 2 * inside[i] >= regions.pixel_counts[i];
    }
  }
  return polygonize_selected(regions, keep, after_year, "predicted");
}

PolygonSet cube_to_polygons(const HeightCube& cube, const DeltaConfig& cfg, int workers) {
  cfg.validate();
  if (cube.size() < 2) throw DeltaError("cube_to_polygons: needs at least two layers");
  std::vector<PolygonSet> per_pair(cube.size() - 1);
  parallel_for(per_pair.size(), workers, [&](std::size_t i) {
    per_pair[i] = pair_to_polygons(cube.slice(i), cube.slice(i + 1), cube.years()[i + 1], cfg);
  });
  PolygonSet out;
  for (auto& set : per_pair) {
    for (auto& p : set) out.push_back(std::move(p));
  }
  return out;
}

}  // namespace canopy
