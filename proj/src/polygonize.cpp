// Pixel-boundary tracing of labeled regions into polygons.
//
// Every region pixel contributes one directed unit edge per side that borders
// a pixel outside the region, oriented so the region lies to the left. Edges
// are chained into closed rings. At a vertex shared by two diagonal region
// pixels (two outgoing edges) the walk turns right, which keeps 8-connected
// pixels on one ring.

#include "canopy/delta.hpp"

#include <algorithm>
#include <unordered_map>

namespace canopy {

namespace {

struct Edge {
  std::int64_t from;
  std::int64_t to;
  int dc;
  int dr;
};

}  // namespace

PolygonSet polygonize_selected(const LabeledRegions& regions, const std::vector<bool>& keep,
                               std::optional<int> year, const std::string& tag) {
  const auto& labels = regions.labels;
  const int H = static_cast<int>(labels.rows());
  const int W = static_cast<int>(labels.cols());
  const std::int64_t stride = W + 1;
  auto vid = [stride](int r, int c) { return static_cast<std::int64_t>(r) * stride + c; };
  auto label_at = [&](int r, int c) -> std::int32_t {
    if (r < 0 || r >= H || c < 0 || c >= W) return 0;
    return labels(r, c);
  };

  std::vector<std::vector<Edge>> edges(regions.region_count());
  for (int r = 0; r < H; ++r) {
    for (int c = 0; c < W; ++c) {
      const auto l = labels(r, c);
      if (l <= 0 || !keep[static_cast<std::size_t>(l - 1)]) continue;
      auto& e = edges[static_cast<std::size_t>(l - 1)];
      if (label_at(r - 1, c) != l) e.push_back({vid(r, c + 1), vid(r, c), -1, 0});          // north, west-bound
      if (label_at(r, c - 1) != l) e.push_back({vid(r, c), vid(r + 1, c), 0, 1});           // west, south-bound
      if (label_at(r + 1, c) != l) e.push_back({vid(r + 1, c), vid(r + 1, c + 1), 1, 0});   // south, east-bound
      if (label_at(r, c + 1) != l) e.push_back({vid(r + 1, c + 1), vid(r, c + 1), 0, -1});  // east, north-bound
    }
  }

  const GridMeta& meta = regions.meta;
  auto to_point = [&](std::int64_t v) {
    const auto r = static_cast<double>(v / stride);
    const auto c = static_cast<double>(v % stride);
    return Point{meta.corner_x(c), meta.corner_y(r)};
  };

  PolygonSet out;
  for (std::size_t li = 0; li < edges.size(); ++li) {
    const auto& e = edges[li];
    if (e.empty()) continue;
    std::unordered_map<std::int64_t, std::pair<int, int>> outgoing;  // up to two per vertex
    outgoing.reserve(e.size());
    for (int i = 0; i < static_cast<int>(e.size()); ++i) {
      auto [it, inserted] = outgoing.try_emplace(e[i].from, i, -1);
      if (!inserted) it->second.second = i;
    }
    std::vector<bool> used(e.size(), false);
    std::vector<Ring> rings;
    for (std::size_t start = 0; start < e.size(); ++start) {
      if (used[start]) continue;
      Ring ring;
      std::size_t cur = start;
      used[cur] = true;
      while (true) {
        const auto [a, b] = outgoing.at(e[cur].to);
        std::size_t next;
        if (b < 0) {
          next = static_cast<std::size_t>(a);
        } else {
          // Right turn of (dc, dr) in row-down pixel coordinates is (-dr, dc).
          const int rc = -e[cur].dr, rr = e[cur].dc;
          next = (e[a].dc == rc && e[a].dr == rr) ? static_cast<std::size_t>(a)
                                                  : static_cast<std::size_t>(b);
        }
        if (e[next].dc != e[cur].dc || e[next].dr != e[cur].dr) {
          ring.push_back(to_point(e[cur].to));
        }
        if (next == start) break;
        used[next] = true;
        cur = next;
      }
      ring.push_back(ring.front());
      rings.push_back(std::move(ring));
    }
    // Exterior (positive area) first, holes after, each in trace order.
    std::stable_partition(rings.begin(), rings.end(),
                          [](const Ring& r) { return signed_ring_area(r) > 0.0; });
    out.emplace_back(std::move(rings), year, tag);
  }
  return out;
}

}  // namespace canopy
