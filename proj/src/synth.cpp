#include "canopy/synth.hpp"

#include "canopy/delta.hpp"
#include "canopy/geojson.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>

namespace canopy {

PortableRng::PortableRng(std::uint64_t seed) : engine_(seed) {}

double PortableRng::uniform() {
  return static_cast<double>(engine_() >> 11) * 0x1.0p-53;
}

double PortableRng::normal() {
  const double u1 = 1.0 - uniform();  // (0, 1]
  const double u2 = uniform();
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

void SynthConfig::validate() const {
  if (T < 1 || H < 1 || W < 1) throw SynthError("synth: T, H, W must be >= 1");
  if (!(pixel_size > 0.0)) throw SynthError("synth: pixel_size must be > 0");
  if (n_stands < 1) throw SynthError("synth: n_stands must be >= 1");
  if (!(noise_sigma >= 0.0)) throw SynthError("synth: noise_sigma must be >= 0");
  if (!(base_min >= 0.0) || base_max < base_min) throw SynthError("synth: bad base height range");
  if (growth_max < growth_min) throw SynthError("synth: bad growth range");
  if (!shifts.empty() && static_cast<int>(shifts.size()) != T) {
    throw SynthError("synth: shifts must list one offset per layer");
  }
  for (const auto& s : shifts) {
    if (std::abs(s.dx) > 2 || std::abs(s.dy) > 2) throw SynthError("synth: shift outside +-2 px");
  }
  for (const auto& e : events) {
    if (!(e.drop >= 0.0)) throw SynthError("synth: disturbance drop must be >= 0");
    if (e.year <= first_year || e.year >= first_year + T) {
      throw SynthError("synth: disturbance year outside the series (or in its first year)");
    }
    bool inside;
    if (e.shape == DisturbanceEvent::Shape::Rectangle) {
      inside = e.width >= 1 && e.height >= 1 && e.col >= 0 && e.row >= 0 && e.col + e.width <= W &&
               e.row + e.height <= H;
    } else {
      inside = e.radius > 0.0 && e.col - e.radius >= 0 && e.row - e.radius >= 0 &&
               e.col + e.radius <= W - 1 && e.row + e.radius <= H - 1;
    }
    if (!inside) throw SynthError("synth: disturbance outside grid");
  }
  if (truth_kernel < 1 || truth_kernel % 2 == 0) throw SynthError("synth: truth_kernel must be odd");
}

std::vector<int> SynthConfig::years() const {
  std::vector<int> y(static_cast<std::size_t>(T));
  for (int t = 0; t < T; ++t) y[static_cast<std::size_t>(t)] = first_year + t;
  return y;
}

GridMeta SynthConfig::grid() const {
  GridMeta m;
  m.origin_x = origin_x;
  m.origin_y = origin_y;
  m.pixel_size = pixel_size;
  m.width = W;
  m.height = H;
  m.crs = crs;
  return m;
}

ImageF translate_replicate(const ImageF& in, Offset shift) {
  const auto H = in.rows(), W = in.cols();
  ImageF out(H, W);
  for (Eigen::Index r = 0; r < H; ++r) {
    const Eigen::Index sr = std::clamp<Eigen::Index>(r - shift.dy, 0, H - 1);
    for (Eigen::Index c = 0; c < W; ++c) {
      out(r, c) = in(sr, std::clamp<Eigen::Index>(c - shift.dx, 0, W - 1));
    }
  }
  return out;
}

namespace {

Mask footprint(const DisturbanceEvent& e, int H, int W) {
  Mask m = Mask::Zero(H, W);
  if (e.shape == DisturbanceEvent::Shape::Rectangle) {
    m.block(e.row, e.col, e.height, e.width).setOnes();
    return m;
  }
  // Disc built from whole 3x3 blocks whose pixel centers all fall inside the
  // radius, so the footprint is unchanged by a 3x3 opening.
  const double r2 = e.radius * e.radius;
  auto inside = [&](int r, int c) {
    const double dr = r - e.row, dc = c - e.col;
    return dr * dr + dc * dc <= r2;
  };
  for (int r = 1; r + 1 < H; ++r) {
    for (int c = 1; c + 1 < W; ++c) {
      bool all = true;
      for (int i = -1; i <= 1 && all; ++i)
        for (int j = -1; j <= 1 && all; ++j) all = inside(r + i, c + j);
      if (all) m.block(r - 1, c - 1, 3, 3).setOnes();
    }
  }
  return m;
}

// Pixels of `m` covered by at least one k x k block lying entirely within `m`.
Mask block_cover(const Mask& m, int k) {
  const int H = static_cast<int>(m.rows()), W = static_cast<int>(m.cols());
  Mask out = Mask::Zero(H, W);
  for (int r = 0; r + k <= H; ++r) {
    for (int c = 0; c + k <= W; ++c) {
      if ((m.block(r, c, k, k) != 0).all()) out.block(r, c, k, k).setOnes();
    }
  }
  return out;
}

// Drops 8-connected groups with area below min_area.
Mask drop_small(const Mask& m, double pixel_area, double min_area) {
  const int H = static_cast<int>(m.rows()), W = static_cast<int>(m.cols());
  Mask out = m;
  Image<std::uint8_t> seen = Image<std::uint8_t>::Zero(H, W);
  std::vector<std::pair<int, int>> stack, group;
  for (int r = 0; r < H; ++r) {
    for (int c = 0; c < W; ++c) {
      if (!m(r, c) || seen(r, c)) continue;
      group.clear();
      stack.assign(1, {r, c});
      seen(r, c) = 1;
      while (!stack.empty()) {
        auto [pr, pc] = stack.back();
        stack.pop_back();
        group.emplace_back(pr, pc);
        for (int nr = std::max(0, pr - 1); nr <= std::min(H - 1, pr + 1); ++nr)
          for (int nc = std::max(0, pc - 1); nc <= std::min(W - 1, pc + 1); ++nc)
            if (m(nr, nc) && !seen(nr, nc)) {
              seen(nr, nc) = 1;
              stack.emplace_back(nr, nc);
            }
      }
      if (static_cast<double>(group.size()) * pixel_area < min_area) {
        for (auto [gr, gc] : group) out(gr, gc) = 0;
      }
    }
  }
  return out;
}

}  // namespace

SynthTruth generate(const SynthConfig& cfg) {
  cfg.validate();
  const int T = cfg.T, H = cfg.H, W = cfg.W;
  const GridMeta meta = cfg.grid();

  // Stand layout: nearest-site (Voronoi) partition.
  PortableRng layout(cfg.layout_seed);
  struct Stand {
    double x, y, base, growth;
  };
  std::vector<Stand> stands;
  for (int i = 0; i < cfg.n_stands; ++i) {
    Stand s{};
    s.x = layout.uniform(0.0, W);
    s.y = layout.uniform(0.0, H);
    s.base = layout.uniform(cfg.base_min, cfg.base_max);
    s.growth = layout.uniform(cfg.growth_min, cfg.growth_max);
    stands.push_back(s);
  }
  Image<double> base(H, W), growth(H, W);
  for (int r = 0; r < H; ++r) {
    for (int c = 0; c < W; ++c) {
      std::size_t best = 0;
      double best_d = std::numeric_limits<double>::infinity();
      for (std::size_t i = 0; i < stands.size(); ++i) {
        const double dx = c + 0.5 - stands[i].x, dy = r + 0.5 - stands[i].y;
        const double d = dx * dx + dy * dy;
        if (d < best_d) {
          best_d = d;
          best = i;
        }
      }
      base(r, c) = stands[best].base;
      growth(r, c) = stands[best].growth;
    }
  }

  SynthTruth truth;
  std::vector<ImageF> clean;
  Image<double> current = base;
  clean.push_back(current.cast<float>());
  truth.true_masks.push_back(Mask::Zero(H, W));
  for (int t = 1; t < T; ++t) {
    const int year = cfg.first_year + t;
    Image<double> next = current + growth;
    Mask touched = Mask::Zero(H, W);
    for (const auto& e : cfg.events) {
      if (e.year != year) continue;
      const Mask fp = footprint(e, H, W);
      next = (fp != 0).select((next - e.drop).cwiseMax(0.0), next);
      touched = touched.max(fp);
    }
    const ImageF next_f = next.cast<float>();
    const ImageF& prev_f = clean.back();
    // Truth follows the stored float heights, so it matches what the files hold.
    const Mask dropped =
        ((touched != 0) && ((prev_f.cast<double>() - next_f.cast<double>()) >= cfg.truth_threshold))
            .cast<std::uint8_t>();
    truth.true_masks.push_back(
        drop_small(block_cover(dropped, cfg.truth_kernel), meta.pixel_area(), cfg.truth_min_area));
    clean.push_back(next_f);
    current = next;
  }

  PortableRng noise(cfg.seed);
  std::vector<ImageF> noisy;
  for (int t = 0; t < T; ++t) {
    const Offset shift = cfg.shifts.empty() ? Offset{} : cfg.shifts[static_cast<std::size_t>(t)];
    truth.true_offsets.push_back(shift);
    ImageF layer = translate_replicate(clean[static_cast<std::size_t>(t)], shift);
    if (cfg.noise_sigma > 0.0) {
      for (Eigen::Index i = 0; i < layer.size(); ++i) {
        const double v = layer.data()[i] + cfg.noise_sigma * noise.normal();
        layer.data()[i] = static_cast<float>(std::clamp(v, 0.0, static_cast<double>(kMaxHeight)));
      }
    }
    noisy.push_back(std::move(layer));
  }

  const std::vector<int> years = cfg.years();
  for (int t = 1; t < T; ++t) {
    const DisturbanceMask dm(meta, years[static_cast<std::size_t>(t)], truth.true_masks[static_cast<std::size_t>(t)]);
    for (auto& p : polygonize(label_regions(dm), 0.0, dm.year, "truth")) {
      truth.true_polygons.push_back(std::move(p));
    }
  }
  truth.clean_cube = HeightCube(meta, years, std::move(clean));
  truth.noisy_cube = HeightCube(meta, years, std::move(noisy));
  return truth;
}

std::vector<DisturbanceEvent> random_events(const SynthConfig& cfg, int count, std::uint64_t seed) {
  PortableRng rng(seed);
  auto pick = [&](int lo, int hi) {  // inclusive
    return lo + static_cast<int>(rng.uniform() * (hi - lo + 1));
  };
  // Smallest side giving >= 100 m^2.
  const int min_side = static_cast<int>(std::ceil(10.0 / cfg.pixel_size));
  const int max_side = std::max(min_side, std::min({3 * min_side, cfg.W / 4, cfg.H / 4}));
  const int margin = 3;
  if (cfg.W < max_side + 2 * margin || cfg.H < max_side + 2 * margin || cfg.T < 2) {
    throw SynthError("random_events: grid too small");
  }
  std::vector<DisturbanceEvent> events;
  for (int i = 0; i < count; ++i) {
    const int year = cfg.first_year + pick(1, cfg.T - 1);
    const double drop = rng.uniform(12.0, 25.0);
    if (i % 2 == 0) {
      const int w = pick(min_side, max_side), h = pick(min_side, max_side);
      events.push_back(DisturbanceEvent::rect(year, pick(margin, cfg.W - margin - w),
                                              pick(margin, cfg.H - margin - h), w, h, drop));
    } else {
      const int r = pick((min_side + 1) / 2 + 1, max_side / 2);
      events.push_back(DisturbanceEvent::disc(year, pick(margin + r, cfg.W - margin - 1 - r),
                                              pick(margin + r, cfg.H - margin - 1 - r), r, drop));
    }
  }
  return events;
}

std::vector<Offset> random_shifts(int T, int max_abs, std::uint64_t seed, int reference_index) {
  PortableRng rng(seed);
  std::vector<Offset> out(static_cast<std::size_t>(T));
  for (int t = 0; t < T; ++t) {
    const int dx = -max_abs + static_cast<int>(rng.uniform() * (2 * max_abs + 1));
    const int dy = -max_abs + static_cast<int>(rng.uniform() * (2 * max_abs + 1));
    if (t != reference_index) out[static_cast<std::size_t>(t)] = {dx, dy};
  }
  return out;
}

void write_synth(const SynthTruth& truth, const std::filesystem::path& out_dir) {
  write_cube(truth.noisy_cube, out_dir / "noisy");
  write_cube(truth.clean_cube, out_dir / "clean");
  std::ofstream csv(out_dir / "true_offsets.csv");
  if (!csv) throw RasterError("cannot write true_offsets.csv");
  csv << "year,dx,dy\n";
  for (std::size_t t = 0; t < truth.true_offsets.size(); ++t) {
    csv << truth.noisy_cube.years()[t] << "," << truth.true_offsets[t].dx << ","
        << truth.true_offsets[t].dy << "\n";
  }
  write_geojson(truth.true_polygons, out_dir / "true_polygons.geojson", truth.clean_cube.meta().crs);
}

}  // namespace canopy
