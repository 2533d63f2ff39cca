#include "canopy/coregister.hpp"

#include "canopy/parallel.hpp"

#include <chrono>
#include <cstdlib>
#include <fstream>
#include <iomanip>

namespace canopy {

void OffsetSearchConfig::validate() const {
  if (window_radius < 0) throw CoregError("coregister: window_radius must be >= 0");
  if (patch_overlap < 2 * window_radius) {
    throw CoregError("coregister: patch_overlap must be >= 2 * window_radius");
  }
  if (patch_size <= 2 * patch_overlap) {
    throw CoregError("coregister: patch_size must be > 2 * patch_overlap");
  }
}

std::size_t OffsetSearchConfig::reference_for(std::size_t T) const {
  if (reference_index < 0) return T / 2;
  if (static_cast<std::size_t>(reference_index) >= T) {
    throw CoregError("coregister: reference_index out of range");
  }
  return static_cast<std::size_t>(reference_index);
}

std::optional<OffsetScore> shifted_msd(const HeightRaster& moving, const HeightRaster& reference,
                                       Offset o) {
  require_compatible(moving.meta(), reference.meta(), "best_offset");
  const int H = moving.meta().height, W = moving.meta().width;
  const int r0 = std::max(0, -o.dy), r1 = std::min(H, H - o.dy);
  const int c0 = std::max(0, -o.dx), c1 = std::min(W, W - o.dx);
  if (r1 <= r0 || c1 <= c0) return std::nullopt;
  const auto mov = moving.values().block(r0 + o.dy, c0 + o.dx, r1 - r0, c1 - c0);
  const auto ref = reference.values().block(r0, c0, r1 - r0, c1 - c0);
  const auto valid = (mov != moving.meta().nodata) && (ref != reference.meta().nodata);
  const std::int64_t n = valid.count();
  if (n == 0) return std::nullopt;
  const double ssd = valid.select((mov.cast<double>() - ref.cast<double>()).square(), 0.0).sum();
  return OffsetScore{o, ssd / static_cast<double>(n), n};
}

OffsetScore best_offset(const HeightRaster& moving, const HeightRaster& reference, int window_radius) {
  if (window_radius < 0) throw CoregError("best_offset: window_radius must be >= 0");
  std::optional<OffsetScore> best;
  for (int dy = -window_radius; dy <= window_radius; ++dy) {
    for (int dx = -window_radius; dx <= window_radius; ++dx) {
      const auto s = shifted_msd(moving, reference, {dx, dy});
      if (!s) continue;
      if (!best || s->score < best->score ||
          (s->score == best->score &&
           std::abs(dx) + std::abs(dy) < std::abs(best->offset.dx) + std::abs(best->offset.dy))) {
        best = s;
      }
    }
  }
  if (!best) throw CoregError("best_offset: no valid overlap for any offset");
  return *best;
}

std::vector<int> patch_starts(int extent, int patch_size, int overlap) {
  std::vector<int> starts{0};
  if (extent <= patch_size) return starts;
  const int stride = patch_size - overlap;
  for (int s = stride; s + patch_size < extent; s += stride) starts.push_back(s);
  starts.push_back(extent - patch_size);
  return starts;
}

CoregResult coregister_cube(const HeightCube& cube, const OffsetSearchConfig& cfg, int workers,
                            const std::function<void(int, double)>& on_layer) {
  cfg.validate();
  const std::size_t T = cube.size();
  const std::size_t ref = cfg.reference_for(T);
  const GridMeta& meta = cube.meta();
  const int H = meta.height, W = meta.width;
  const float nodata = meta.nodata;

  struct Patch {
    int x0, y0, w, h;
  };
  std::vector<Patch> patches;
  for (int y0 : patch_starts(H, cfg.patch_size, cfg.patch_overlap)) {
    for (int x0 : patch_starts(W, cfg.patch_size, cfg.patch_overlap)) {
      patches.push_back({x0, y0, std::min(cfg.patch_size, W), std::min(cfg.patch_size, H)});
    }
  }

  std::vector<std::size_t> moving_layers;
  for (std::size_t t = 0; t < T; ++t)
    if (t != ref) moving_layers.push_back(t);

  // Offset search, one task per (layer, patch); results land in fixed slots.
  std::vector<OffsetScore> scores(moving_layers.size() * patches.size());
  parallel_for(scores.size(), workers, [&](std::size_t i) {
    const std::size_t t = moving_layers[i / patches.size()];
    const Patch& p = patches[i % patches.size()];
    const GridMeta pm = meta.window(p.x0, p.y0, p.w, p.h);
    const HeightRaster mov(pm, cube.layer(t).block(p.y0, p.x0, p.h, p.w));
    const HeightRaster refp(pm, cube.layer(ref).block(p.y0, p.x0, p.h, p.w));
    scores[i] = best_offset(mov, refp, cfg.window_radius);
  });

  CoregResult result;
  std::vector<ImageF> layers(T);
  layers[ref] = cube.layer(ref);
  parallel_for(moving_layers.size(), workers, [&](std::size_t li) {
    const auto start = std::chrono::steady_clock::now();
    const std::size_t t = moving_layers[li];
    const ImageF& src = cube.layer(t);
    Image<double> sum = Image<double>::Zero(H, W);
    Image<std::int32_t> count = Image<std::int32_t>::Zero(H, W);
    for (std::size_t pi = 0; pi < patches.size(); ++pi) {
      const Patch& p = patches[pi];
      const Offset o = scores[li * patches.size() + pi].offset;
      // Output pixel (r, c) takes src(r + dy, c + dx) when that source lies in the patch.
      const int r0 = std::max(0, p.y0 - o.dy), r1 = std::min(H, p.y0 + p.h - o.dy);
      const int c0 = std::max(0, p.x0 - o.dx), c1 = std::min(W, p.x0 + p.w - o.dx);
      for (int r = r0; r < r1; ++r) {
        for (int c = c0; c < c1; ++c) {
          const float v = src(r + o.dy, c + o.dx);
          if (v == nodata) continue;
          sum(r, c) += v;
          count(r, c) += 1;
        }
      }
    }
    layers[t] = (count > 0).select((sum / count.cast<double>().max(1.0)).cast<float>(), nodata);
    if (on_layer) {
      const std::chrono::duration<double> dt = std::chrono::steady_clock::now() - start;
      on_layer(cube.years()[t], dt.count());
    }
  });

  for (std::size_t li = 0; li < moving_layers.size(); ++li) {
    for (std::size_t pi = 0; pi < patches.size(); ++pi) {
      const auto& s = scores[li * patches.size() + pi];
      const Patch& p = patches[pi];
      result.offsets.push_back(
          {cube.years()[moving_layers[li]], p.x0, p.y0, p.w, p.h, s.offset, s.score});
    }
  }
  result.cube = HeightCube(meta, cube.years(), std::move(layers));
  return result;
}

void write_offsets_csv(const OffsetField& field, const std::filesystem::path& path) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw CoregError("cannot write " + path.string());
  out << "year,patch_x0,patch_y0,dx,dy,score\n" << std::setprecision(17);
  for (const auto& p : field) {
    out << p.year << "," << p.x0 << "," << p.y0 << "," << p.offset.dx << "," << p.offset.dy << ","
        << p.score << "\n";
  }
}

}  // namespace canopy
