#pragma once

// Slow reference implementations shared by the unit tests and the acceptance run.

#include "canopy/raster.hpp"
#include "canopy/tv.hpp"

#include <array>
#include <cmath>
#include <deque>
#include <vector>

namespace oracle {

using namespace canopy;

inline Volume<double> volume_from(const std::array<double, 48>& flat) {
  Volume<double> v;
  for (int t = 0; t < 3; ++t) {
    ImageD s(4, 4);
    for (int i = 0; i < 16; ++i) s(i / 4, i % 4) = flat[static_cast<std::size_t>(t * 16 + i)];
    v.push_back(s);
  }
  return v;
}

// Subgradient of the objective; zero is used at points where a norm is not differentiable.
inline Volume<double> subgradient(const Volume<double>& g, const Volume<double>& h, double lt, double ls) {
  Volume<double> out;
  for (std::size_t t = 0; t < g.size(); ++t) out.push_back(2.0 * (g[t] - h[t]));
  const auto T = g.size();
  const auto H = g[0].rows(), W = g[0].cols();
  for (std::size_t t = 0; t + 1 < T; ++t) {
    const ImageD d = g[t + 1] - g[t];
    const double n = d.matrix().norm();
    if (n > 0) {
      out[t + 1] += lt * d / n;
      out[t] -= lt * d / n;
    }
  }
  auto edge = [&](Eigen::Index r0, Eigen::Index c0, Eigen::Index r1, Eigen::Index c1) {
    double n2 = 0;
    for (std::size_t t = 0; t < T; ++t) n2 += std::pow(g[t](r1, c1) - g[t](r0, c0), 2);
    if (n2 == 0) return;
    const double n = std::sqrt(n2);
    for (std::size_t t = 0; t < T; ++t) {
      const double s = ls * (g[t](r1, c1) - g[t](r0, c0)) / n;
      out[t](r1, c1) += s;
      out[t](r0, c0) -= s;
    }
  };
  for (Eigen::Index r = 0; r < H; ++r) {
    for (Eigen::Index c = 0; c < W; ++c) {
      if (r + 1 < H) edge(r, c, r + 1, c);
      if (c + 1 < W) edge(r, c, r, c + 1);
    }
  }
  return out;
}

// Direct erosion/dilation by the definition, out-of-grid treated as background.
inline Mask erode_oracle(const Mask& m, int k) {
  const int H = static_cast<int>(m.rows()), W = static_cast<int>(m.cols()), h = k / 2;
  Mask out = Mask::Zero(H, W);
  for (int r = 0; r < H; ++r)
    for (int c = 0; c < W; ++c) {
      bool all = true;
      for (int i = -h; i <= h; ++i)
        for (int j = -h; j <= h; ++j) {
          const int rr = r + i, cc = c + j;
          all = all && rr >= 0 && cc >= 0 && rr < H && cc < W && m(rr, cc);
        }
      out(r, c) = all;
    }
  return out;
}

inline Mask dilate_oracle(const Mask& m, int k) {
  const int H = static_cast<int>(m.rows()), W = static_cast<int>(m.cols()), h = k / 2;
  Mask out = Mask::Zero(H, W);
  for (int r = 0; r < H; ++r)
    for (int c = 0; c < W; ++c) {
      bool any = false;
      for (int i = -h; i <= h; ++i)
        for (int j = -h; j <= h; ++j) {
          const int rr = r + i, cc = c + j;
          any = any || (rr >= 0 && cc >= 0 && rr < H && cc < W && m(rr, cc));
        }
      out(r, c) = any;
    }
  return out;
}

// Breadth-first 8-connected flood fill; returns component sizes in order of first pixel.
inline std::vector<std::int64_t> flood_fill_sizes(const Mask& m, Image<std::int32_t>* labels = nullptr) {
  const int H = static_cast<int>(m.rows()), W = static_cast<int>(m.cols());
  Image<std::int32_t> lab = Image<std::int32_t>::Zero(H, W);
  std::vector<std::int64_t> sizes;
  for (int r = 0; r < H; ++r)
    for (int c = 0; c < W; ++c) {
      if (!m(r, c) || lab(r, c)) continue;
      const int id = static_cast<int>(sizes.size()) + 1;
      std::deque<std::pair<int, int>> q{{r, c}};
      lab(r, c) = id;
      std::int64_t n = 0;
      while (!q.empty()) {
        auto [y, x] = q.front();
        q.pop_front();
        ++n;
        for (int dy = -1; dy <= 1; ++dy)
          for (int dx = -1; dx <= 1; ++dx) {
            const int yy = y + dy, xx = x + dx;
            if (yy < 0 || xx < 0 || yy >= H || xx >= W || !m(yy, xx) || lab(yy, xx)) continue;
            lab(yy, xx) = id;
            q.push_back({yy, xx});
          }
      }
      sizes.push_back(n);
    }
  if (labels) *labels = lab;
  return sizes;
}

}  // namespace oracle
