#include "canopy/tv.hpp"

#include "canopy/parallel.hpp"

#include <chrono>

namespace canopy {

void TvConfig::validate() const {
  if (!(lambda_temp >= 0.0) || !(lambda_spat >= 0.0)) throw TvError("tv: lambdas must be >= 0");
  if (!(tau > 0.0) || !(sigma > 0.0)) throw TvError("tv: tau and sigma must be > 0");
  // ||K||^2 <= 12; allow rounding of the default 1/sqrt(12) steps.
  if (tau * sigma * 12.0 > 1.0 + 1e-12) throw TvError("tv: step sizes violate tau*sigma*12 <= 1");
  if (max_iters < 0) throw TvError("tv: max_iters must be >= 0");
  if (!(rel_tol >= 0.0)) throw TvError("tv: rel_tol must be >= 0");
}

int tile_halo(const TvConfig& cfg) {
  return static_cast<int>(std::ceil(cfg.lambda_spat * 10.0)) + 8;
}

namespace {

struct Prepared {
  Volume<double> h;
  std::optional<std::vector<Mask>> valid;
};

Prepared prepare(const HeightCube& cube, int col0, int row0, int cols, int rows) {
  Prepared out;
  bool any_nodata = false;
  std::vector<Mask> valid;
  const float nodata = cube.meta().nodata;
  for (const auto& layer : cube.layers()) {
    const ImageF block = layer.block(row0, col0, rows, cols);
    Mask m = (block != nodata).cast<std::uint8_t>();
    any_nodata = any_nodata || (m == 0).any();
    out.h.push_back((block != nodata).select(block.cast<double>(), 0.0));
    valid.push_back(std::move(m));
  }
  if (any_nodata) out.valid = std::move(valid);
  return out;
}

// `g` is a block of the tile solution starting at (row0, col0) of `valid`.
ImageF to_heights(const Image<double>& g, const Mask* valid, float nodata, int row0, int col0) {
  ImageF out = g.cwiseMax(0.0).cast<float>();
  if (valid) out = (valid->block(row0, col0, g.rows(), g.cols()) != 0).select(out, nodata);
  return out;
}

}  // namespace

double tv_objective(const HeightCube& g, const HeightCube& h, const TvConfig& cfg) {
  require_compatible(g.meta(), h.meta(), "tv_objective");
  if (g.size() != h.size()) throw TvError("tv_objective: cubes differ in length");
  const auto W = h.meta().width, H = h.meta().height;
  Prepared ph = prepare(h, 0, 0, W, H);
  Prepared pg = prepare(g, 0, 0, W, H);
  std::optional<std::vector<Mask>> valid = ph.valid;
  if (pg.valid) {
    if (!valid) valid = pg.valid;
    else
      for (std::size_t t = 0; t < valid->size(); ++t) (*valid)[t] = (*valid)[t] * (*pg.valid)[t];
  }
  return tv_objective(pg.h, ph.h, cfg, valid ? &*valid : nullptr);
}

TvResult denoise(const HeightCube& h, const TvConfig& cfg) {
  auto tiled = denoise_tiled(h, cfg, 0, 1);
  return {std::move(tiled.cube), std::move(tiled.tiles.front().report)};
}

TiledTvResult denoise_tiled(const HeightCube& h, const TvConfig& cfg, int tile_size, int workers,
                            std::optional<int> halo,
                            const std::function<void(const TileReport&, double)>& on_tile) {
  cfg.validate();
  const int W = h.meta().width, H = h.meta().height;
  const int halo_px = halo.value_or(tile_halo(cfg));
  const float nodata = h.meta().nodata;

  std::vector<TileReport> tiles;
  if (tile_size <= 0) {
    tiles.push_back({0, 0, W, H, 0, {}, {}});
  } else {
    for (int r = 0; r < H; r += tile_size) {
      for (int c = 0; c < W; c += tile_size) {
        tiles.push_back({c, r, std::min(tile_size, W - c), std::min(tile_size, H - r), 0, {}, {}});
      }
    }
  }
  struct Window {
    int c0, r0, c1, r1;
  };
  std::vector<Window> windows;
  for (const auto& t : tiles) {
    windows.push_back({std::max(0, t.col0 - halo_px), std::max(0, t.row0 - halo_px),
                       std::min(W, t.col0 + t.cols + halo_px), std::min(H, t.row0 + t.rows + halo_px)});
  }

  const std::size_t slices = h.size() > 1 ? h.size() - 1 : 0;
  const bool coupled = tiles.size() > 1 && slices > 0 && cfg.lambda_temp > 0.0;
  const int passes = coupled ? kTileCouplingPasses : 1;

  // Current estimate on the full grid; differences touching nodata are ignored.
  Volume<double> estimate;
  std::vector<ImageD> valid;
  for (const auto& layer : h.layers()) {
    valid.push_back((layer != nodata).cast<double>());
    estimate.push_back((layer != nodata).select(layer.cast<double>(), 0.0));
  }

  std::vector<ImageF> out(h.size(), ImageF(H, W));
  for (int pass = 0; pass < passes; ++pass) {
    // Coordinator: window share of every slice norm, in fixed tile order.
    std::vector<std::vector<double>> radii(tiles.size(), std::vector<double>(slices, cfg.lambda_temp));
    if (coupled) {
      for (std::size_t t = 0; t < slices; ++t) {
        const ImageD d = (estimate[t + 1] - estimate[t]) * valid[t] * valid[t + 1];
        const double total = d.matrix().norm();
        if (total == 0.0) continue;
        for (std::size_t i = 0; i < tiles.size(); ++i) {
          const auto& w = windows[i];
          const double part = d.block(w.r0, w.c0, w.r1 - w.r0, w.c1 - w.c0).matrix().norm();
          radii[i][t] = cfg.lambda_temp * part / total;
        }
      }
    }

    const bool last = pass + 1 == passes;
    parallel_for(tiles.size(), workers, [&](std::size_t i) {
      const auto start = std::chrono::steady_clock::now();
      TileReport& tile = tiles[i];
      const auto& w = windows[i];
      Prepared prep = prepare(h, w.c0, w.r0, w.c1 - w.c0, w.r1 - w.r0);
      std::optional<std::vector<Mask>> tile_valid = prep.valid;
      TvSolver<double> solver(std::move(prep.h), std::move(prep.valid), cfg);
      if (coupled) solver.set_temporal_radii(radii[i]);
      tile.pass = pass;
      tile.temporal_radii = radii[i];
      tile.report = solver.solve();
      const auto& g = solver.primal();
      // Tiles write disjoint regions.
      for (std::size_t t = 0; t < g.size(); ++t) {
        const auto center = g[t].block(tile.row0 - w.r0, tile.col0 - w.c0, tile.rows, tile.cols);
        if (!last) {
          estimate[t].block(tile.row0, tile.col0, tile.rows, tile.cols) = center;
          continue;
        }
        ImageF heights = to_heights(center, tile_valid ? &(*tile_valid)[t] : nullptr, nodata, tile.row0 - w.r0,
                                    tile.col0 - w.c0);
        out[t].block(tile.row0, tile.col0, tile.rows, tile.cols) = heights;
      }
      if (on_tile) {
        const std::chrono::duration<double> dt = std::chrono::steady_clock::now() - start;
        on_tile(tile, dt.count());
      }
    });
  }
  return {HeightCube(h.meta(), h.years(), std::move(out)), std::move(tiles)};
}

}  // namespace canopy
