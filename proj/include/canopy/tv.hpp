#pragma once

// Spatio-temporal total-variation denoising of a T x H x W height cube:
//
//   min_g  ||h - g||^2 + lambda_temp * sum_t ||g_{t+1} - g_t||_F
//                      + lambda_spat * sum_{h,w} (||g_{h+1,w} - g_{h,w}||_2 + ||g_{h,w+1} - g_{h,w}||_2)
//
// The temporal norm groups a whole H x W difference slice; the spatial norms
// group the length-T vector across years at one pixel edge. Solved with the
// first-order primal-dual (Chambolle-Pock) iteration, theta = 1.

#include "canopy/raster.hpp"

#include <algorithm>
#include <cassert>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <optional>
#include <random>
#include <stdexcept>
#include <utility>
#include <vector>

namespace canopy {

class TvError : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

struct TvConfig {
  double lambda_temp = 5.0;
  double lambda_spat = 0.5;
  int max_iters = 500;
  double rel_tol = 1e-4;
  double tau = 1.0 / std::sqrt(12.0);
  double sigma = 1.0 / std::sqrt(12.0);
  /// Objective is recorded every `log_every` iterations (plus first and last).
  int log_every = 10;

  void validate() const;
};

struct TvLogEntry {
  int iter = 0;
  double objective = 0.0;
  double rel_change = 0.0;
};

struct TvReport {
  int iterations = 0;
  double final_rel_change = 0.0;
  std::vector<TvLogEntry> log;
};

/// Slices of a T x H x W volume, one H x W image per year.
template <typename Scalar>
using Volume = std::vector<Image<Scalar>>;

/// Forward differences of a volume, one block per stacked operator:
/// temporal (T-1 slices of H x W), vertical (T of (H-1) x W), horizontal (T of H x (W-1)).
template <typename Scalar>
struct DualState {
  Volume<Scalar> p;
  Volume<Scalar> q_h;
  Volume<Scalar> q_w;

  static DualState zeros(Eigen::Index T, Eigen::Index H, Eigen::Index W) {
    DualState d;
    for (Eigen::Index t = 0; t + 1 < T; ++t) d.p.push_back(Image<Scalar>::Zero(H, W));
    for (Eigen::Index t = 0; t < T; ++t) {
      d.q_h.push_back(Image<Scalar>::Zero(std::max<Eigen::Index>(H - 1, 0), W));
      d.q_w.push_back(Image<Scalar>::Zero(H, std::max<Eigen::Index>(W - 1, 0)));
    }
    return d;
  }
};

namespace detail {

template <typename Scalar>
void check_volume(const Volume<Scalar>& v) {
  if (v.empty()) throw TvError("volume has no slices");
  for (const auto& s : v) {
    if (s.rows() != v.front().rows() || s.cols() != v.front().cols()) {
      throw TvError("volume slices differ in shape");
    }
  }
}

template <typename Scalar>
Scalar sum_sq(const Volume<Scalar>& v) {
  Scalar acc = 0;
  for (const auto& s : v) acc += s.square().sum();
  return acc;
}

}  // namespace detail

/// K g: stacked forward differences with Neumann boundary (no difference past the last index).
template <typename Scalar>
DualState<Scalar> apply_operator(const Volume<Scalar>& g) {
  detail::check_volume(g);
  const auto T = static_cast<Eigen::Index>(g.size());
  const auto H = g.front().rows(), W = g.front().cols();
  DualState<Scalar> d;
  for (Eigen::Index t = 0; t + 1 < T; ++t) d.p.push_back(g[t + 1] - g[t]);
  for (Eigen::Index t = 0; t < T; ++t) {
    if (H > 1) {
      d.q_h.push_back(g[t].bottomRows(H - 1) - g[t].topRows(H - 1));
    } else {
      d.q_h.push_back(Image<Scalar>(0, W));
    }
    if (W > 1) {
      d.q_w.push_back(g[t].rightCols(W - 1) - g[t].leftCols(W - 1));
    } else {
      d.q_w.push_back(Image<Scalar>(H, 0));
    }
  }
  return d;
}

/// K^T d accumulated into `out` (which must already have the volume shape).
template <typename Scalar>
void accumulate_adjoint(const DualState<Scalar>& d, Volume<Scalar>& out) {
  const auto T = out.size();
  const auto H = out.front().rows(), W = out.front().cols();
  for (std::size_t t = 0; t + 1 < T; ++t) {
    out[t] -= d.p[t];
    out[t + 1] += d.p[t];
  }
  for (std::size_t t = 0; t < T; ++t) {
    if (H > 1) {
      out[t].topRows(H - 1) -= d.q_h[t];
      out[t].bottomRows(H - 1) += d.q_h[t];
    }
    if (W > 1) {
      out[t].leftCols(W - 1) -= d.q_w[t];
      out[t].rightCols(W - 1) += d.q_w[t];
    }
  }
}

template <typename Scalar>
Volume<Scalar> apply_adjoint(const DualState<Scalar>& d) {
  if (d.q_h.empty() || d.q_h.size() != d.q_w.size() || d.p.size() + 1 != d.q_h.size()) {
    throw TvError("dual state blocks have inconsistent lengths");
  }
  const auto H = d.q_w.front().rows();
  const auto W = d.q_h.front().cols();
  for (std::size_t t = 0; t < d.q_h.size(); ++t) {
    if (d.q_h[t].rows() != std::max<Eigen::Index>(H - 1, 0) || d.q_h[t].cols() != W ||
        d.q_w[t].rows() != H || d.q_w[t].cols() != std::max<Eigen::Index>(W - 1, 0) ||
        (t < d.p.size() && (d.p[t].rows() != H || d.p[t].cols() != W))) {
      throw TvError("dual state block shape mismatch");
    }
  }
  Volume<Scalar> out(d.q_h.size(), Image<Scalar>::Zero(H, W));
  accumulate_adjoint(d, out);
  return out;
}

template <typename Scalar>
Scalar inner(const Volume<Scalar>& a, const Volume<Scalar>& b) {
  Scalar acc = 0;
  for (std::size_t t = 0; t < a.size(); ++t) acc += (a[t] * b[t]).sum();
  return acc;
}

template <typename Scalar>
Scalar inner(const DualState<Scalar>& a, const DualState<Scalar>& b) {
  return inner(a.p, b.p) + inner(a.q_h, b.q_h) + inner(a.q_w, b.q_w);
}

/// Power-iteration estimate of ||K||^2 for a T x H x W volume.
template <typename Scalar>
Scalar operator_norm_sq(Eigen::Index T, Eigen::Index H, Eigen::Index W, int iters = 200,
                        std::uint64_t seed = 1) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  Volume<Scalar> x(T, Image<Scalar>(H, W));
  for (auto& s : x) s = s.unaryExpr([&](Scalar) { return static_cast<Scalar>(u(rng)); });
  Scalar estimate = 0;
  for (int k = 0; k < iters; ++k) {
    const Scalar nrm = std::sqrt(detail::sum_sq(x));
    if (nrm == 0) return 0;
    for (auto& s : x) s /= nrm;
    Volume<Scalar> y = apply_adjoint(apply_operator(x));
    estimate = inner(x, y);  // Rayleigh quotient of K^T K
    x = std::move(y);
  }
  return estimate;
}

/// 0/1 weights that switch off every difference touching a nodata pixel.
template <typename Scalar>
DualState<Scalar> edge_weights(const std::vector<Mask>& valid) {
  Volume<Scalar> v;
  v.reserve(valid.size());
  for (const auto& m : valid) v.push_back(m.template cast<Scalar>());
  const auto T = v.size();
  const auto H = v.front().rows(), W = v.front().cols();
  DualState<Scalar> w;
  for (std::size_t t = 0; t + 1 < T; ++t) w.p.push_back(v[t] * v[t + 1]);
  for (std::size_t t = 0; t < T; ++t) {
    w.q_h.push_back(H > 1 ? Image<Scalar>(v[t].bottomRows(H - 1) * v[t].topRows(H - 1))
                          : Image<Scalar>(0, W));
    w.q_w.push_back(W > 1 ? Image<Scalar>(v[t].rightCols(W - 1) * v[t].leftCols(W - 1))
                          : Image<Scalar>(H, 0));
  }
  return w;
}

template <typename Scalar>
struct TvTerms {
  Scalar data = 0;
  Scalar temporal = 0;  // unweighted sum of slice norms
  Scalar spatial = 0;   // unweighted sum of edge norms
  std::vector<Scalar> slice_norms;
  Scalar total(const TvConfig& cfg) const {
    return data + static_cast<Scalar>(cfg.lambda_temp) * temporal +
           static_cast<Scalar>(cfg.lambda_spat) * spatial;
  }
  /// Same, with one temporal weight per difference slice.
  Scalar total(const std::vector<Scalar>& lambda_temp, Scalar lambda_spat) const {
    Scalar acc = data + lambda_spat * spatial;
    for (std::size_t t = 0; t < slice_norms.size(); ++t) acc += lambda_temp[t] * slice_norms[t];
    return acc;
  }
};

/// Evaluates the three terms of the objective. `valid`, when given, excludes
/// nodata pixels from the data term and every difference touching them.
template <typename Scalar>
TvTerms<Scalar> tv_terms(const Volume<Scalar>& g, const Volume<Scalar>& h,
                         const std::vector<Mask>* valid = nullptr) {
  detail::check_volume(g);
  if (g.size() != h.size() || g.front().rows() != h.front().rows() ||
      g.front().cols() != h.front().cols()) {
    throw TvError("objective: volumes differ in shape");
  }
  TvTerms<Scalar> terms;
  DualState<Scalar> d = apply_operator(g);
  if (valid) {
    const DualState<Scalar> w = edge_weights<Scalar>(*valid);
    for (std::size_t t = 0; t < g.size(); ++t) {
      terms.data += ((h[t] - g[t]).square() * (*valid)[t].template cast<Scalar>()).sum();
    }
    for (std::size_t t = 0; t < d.p.size(); ++t) d.p[t] *= w.p[t];
    for (std::size_t t = 0; t < d.q_h.size(); ++t) {
      d.q_h[t] *= w.q_h[t];
      d.q_w[t] *= w.q_w[t];
    }
  } else {
    for (std::size_t t = 0; t < g.size(); ++t) terms.data += (h[t] - g[t]).square().sum();
  }
  for (const auto& s : d.p) {
    terms.slice_norms.push_back(s.matrix().norm());
    terms.temporal += terms.slice_norms.back();
  }
  const auto H = g.front().rows(), W = g.front().cols();
  Image<Scalar> acc_h = Image<Scalar>::Zero(std::max<Eigen::Index>(H - 1, 0), W);
  Image<Scalar> acc_w = Image<Scalar>::Zero(H, std::max<Eigen::Index>(W - 1, 0));
  for (std::size_t t = 0; t < g.size(); ++t) {
    acc_h += d.q_h[t].square();
    acc_w += d.q_w[t].square();
  }
  terms.spatial = acc_h.sqrt().sum() + acc_w.sqrt().sum();
  return terms;
}

template <typename Scalar>
Scalar tv_objective(const Volume<Scalar>& g, const Volume<Scalar>& h, const TvConfig& cfg,
                    const std::vector<Mask>* valid = nullptr) {
  return tv_terms(g, h, valid).total(cfg);
}

/// Primal-dual solver state. `step()` performs one full iteration; the
/// driver in `solve()` adds stopping and logging.
template <typename Scalar>
class TvSolver {
public:
  TvSolver(Volume<Scalar> h, std::optional<std::vector<Mask>> valid, TvConfig cfg)
      : h_(std::move(h)), valid_(std::move(valid)), cfg_(cfg) {
    cfg_.validate();
    detail::check_volume(h_);
    T_ = static_cast<Eigen::Index>(h_.size());
    H_ = h_.front().rows();
    W_ = h_.front().cols();
    const Scalar tau = static_cast<Scalar>(cfg_.tau);
    const Scalar shrink = Scalar(1) / (Scalar(1) + 2 * tau);
    if (valid_) {
      if (valid_->size() != h_.size()) throw TvError("validity mask count mismatch");
      weights_ = edge_weights<Scalar>(*valid_);
      for (std::size_t t = 0; t < h_.size(); ++t) {
        const auto v = (*valid_)[t].template cast<Scalar>();
        // Nodata pixels: identity prox, no data pull.
        h_[t] = (v > 0).select(h_[t], Scalar(0));
        prox_scale_.push_back((v > 0).select(Image<Scalar>::Constant(H_, W_, shrink),
                                             Image<Scalar>::Ones(H_, W_)));
      }
    }
    g_ = h_;
    g_bar_ = h_;
    work_ = h_;
    dual_ = DualState<Scalar>::zeros(T_, H_, W_);
    acc_h_ = Image<Scalar>::Zero(std::max<Eigen::Index>(H_ - 1, 0), W_);
    acc_w_ = Image<Scalar>::Zero(H_, std::max<Eigen::Index>(W_ - 1, 0));
    lt_.assign(static_cast<std::size_t>(std::max<Eigen::Index>(T_ - 1, 0)), static_cast<Scalar>(cfg_.lambda_temp));
  }

  /// Replaces lambda_temp with one radius per difference slice. Used by tiled
  /// solving, where a window only sees part of each slice norm.
  void set_temporal_radii(std::vector<Scalar> radii) {
    if (radii.size() != lt_.size()) throw TvError("temporal radius count mismatch");
    for (const Scalar r : radii) {
      if (!(r >= 0)) throw TvError("temporal radii must be >= 0");
    }
    lt_ = std::move(radii);
  }
  const std::vector<Scalar>& temporal_radii() const { return lt_; }

  /// Returns the relative primal change ||g+ - g|| / max(||g||, 1).
  Scalar step() {
    const Scalar sigma = static_cast<Scalar>(cfg_.sigma);
    const Scalar tau = static_cast<Scalar>(cfg_.tau);
    const Scalar ls = static_cast<Scalar>(cfg_.lambda_spat);

    // Dual ascent on the over-relaxed primal, then projection onto the norm balls.
    for (Eigen::Index t = 0; t + 1 < T_; ++t) {
      auto& p = dual_.p[t];
      if (weights_) {
        p += sigma * (g_bar_[t + 1] - g_bar_[t]) * weights_->p[t];
      } else {
        p += sigma * (g_bar_[t + 1] - g_bar_[t]);
      }
      const Scalar nrm = p.matrix().norm();
      const Scalar lt = lt_[static_cast<std::size_t>(t)];
      if (nrm > lt) p *= lt / nrm;
    }
    if (H_ > 1) {
      acc_h_.setZero();
      for (Eigen::Index t = 0; t < T_; ++t) {
        auto& q = dual_.q_h[t];
        if (weights_) {
          q += sigma * (g_bar_[t].bottomRows(H_ - 1) - g_bar_[t].topRows(H_ - 1)) * weights_->q_h[t];
        } else {
          q += sigma * (g_bar_[t].bottomRows(H_ - 1) - g_bar_[t].topRows(H_ - 1));
        }
        acc_h_ += q.square();
      }
      acc_h_ = (acc_h_.sqrt() > ls).select(ls / acc_h_.sqrt(), Scalar(1));
      for (auto& q : dual_.q_h) q *= acc_h_;
    }
    if (W_ > 1) {
      acc_w_.setZero();
      for (Eigen::Index t = 0; t < T_; ++t) {
        auto& q = dual_.q_w[t];
        if (weights_) {
          q += sigma * (g_bar_[t].rightCols(W_ - 1) - g_bar_[t].leftCols(W_ - 1)) * weights_->q_w[t];
        } else {
          q += sigma * (g_bar_[t].rightCols(W_ - 1) - g_bar_[t].leftCols(W_ - 1));
        }
        acc_w_ += q.square();
      }
      acc_w_ = (acc_w_.sqrt() > ls).select(ls / acc_w_.sqrt(), Scalar(1));
      for (auto& q : dual_.q_w) q *= acc_w_;
    }
    assert(max_dual_ratio() <= Scalar(1) + Scalar(1e-9));

    // Primal descent through the data-term prox v -> (v + 2 tau h) / (1 + 2 tau).
    for (auto& w : work_) w.setZero();
    accumulate_adjoint(dual_, work_);
    const Scalar shrink = Scalar(1) / (Scalar(1) + 2 * tau);
    Scalar diff_sq = 0, norm_sq = 0;
    for (Eigen::Index t = 0; t < T_; ++t) {
      auto& next = work_[t];
      if (valid_) {
        next = (g_[t] - tau * next) * prox_scale_[t] + (2 * tau * shrink) * h_[t];
      } else {
        next = (g_[t] - tau * next + 2 * tau * h_[t]) * shrink;
      }
      diff_sq += (next - g_[t]).square().sum();
      norm_sq += g_[t].square().sum();
      g_bar_[t] = 2 * next - g_[t];
      std::swap(g_[t], next);
    }
    ++iterations_;
    const Scalar rel = std::sqrt(diff_sq) / std::max(std::sqrt(norm_sq), Scalar(1));
    if (!std::isfinite(rel)) throw TvError("non-finite values in primal-dual iteration");
    return rel;
  }

  TvReport solve() {
    TvReport report;
    report.log.push_back({0, static_cast<double>(objective()), 0.0});
    const bool no_temporal = std::all_of(lt_.begin(), lt_.end(), [](Scalar l) { return l == 0; });
    if (no_temporal && cfg_.lambda_spat == 0.0) {
      // The data term alone is minimized by the observations.
      return report;
    }
    Scalar rel = std::numeric_limits<Scalar>::infinity();
    for (int it = 1; it <= cfg_.max_iters; ++it) {
      rel = step();
      report.final_rel_change = static_cast<double>(rel);
      const bool done = rel < static_cast<Scalar>(cfg_.rel_tol) || it == cfg_.max_iters;
      if (done || (cfg_.log_every > 0 && it % cfg_.log_every == 0)) {
        const Scalar obj = objective();
        if (!std::isfinite(obj)) throw TvError("non-finite objective");
        report.log.push_back({it, static_cast<double>(obj), static_cast<double>(rel)});
      }
      if (done) break;
    }
    report.iterations = iterations_;
    return report;
  }

  Scalar objective() const {
    return tv_terms(g_, h_, valid_ ? &*valid_ : nullptr).total(lt_, static_cast<Scalar>(cfg_.lambda_spat));
  }

  /// Largest ratio of a dual group norm to its bound (<= 1 when feasible).
  Scalar max_dual_ratio() const {
    Scalar worst = 0;
    const Scalar ls = static_cast<Scalar>(cfg_.lambda_spat);
    auto ratio = [](Scalar n, Scalar bound) {
      if (bound > 0) return n / bound;
      return n > 0 ? std::numeric_limits<Scalar>::infinity() : Scalar(0);
    };
    for (std::size_t t = 0; t < dual_.p.size(); ++t) worst = std::max(worst, ratio(dual_.p[t].matrix().norm(), lt_[t]));
    Image<Scalar> ah = Image<Scalar>::Zero(acc_h_.rows(), acc_h_.cols());
    Image<Scalar> aw = Image<Scalar>::Zero(acc_w_.rows(), acc_w_.cols());
    for (Eigen::Index t = 0; t < T_; ++t) {
      ah += dual_.q_h[t].square();
      aw += dual_.q_w[t].square();
    }
    if (ah.size() > 0) worst = std::max(worst, ratio(ah.sqrt().maxCoeff(), ls));
    if (aw.size() > 0) worst = std::max(worst, ratio(aw.sqrt().maxCoeff(), ls));
    return worst;
  }

  const Volume<Scalar>& primal() const { return g_; }
  const DualState<Scalar>& dual() const { return dual_; }
  int iterations() const { return iterations_; }

private:
  Volume<Scalar> h_;
  std::optional<std::vector<Mask>> valid_;
  TvConfig cfg_;
  Eigen::Index T_ = 0, H_ = 0, W_ = 0;
  std::optional<DualState<Scalar>> weights_;
  std::vector<Scalar> lt_;
  Volume<Scalar> prox_scale_;
  Volume<Scalar> g_, g_bar_, work_;
  DualState<Scalar> dual_;
  Image<Scalar> acc_h_, acc_w_;
  int iterations_ = 0;
};

// Cube-level entry points. Computation runs in double; results are stored as
// float heights with nodata preserved.

struct TvResult {
  HeightCube cube;
  TvReport report;
};

struct TileReport {
  int col0 = 0, row0 = 0, cols = 0, rows = 0;
  /// Coupling pass that produced this report (0-based).
  int pass = 0;
  std::vector<double> temporal_radii;
  TvReport report;
};

struct TiledTvResult {
  HeightCube cube;
  std::vector<TileReport> tiles;
};

/// Halo width used around each spatial tile: ceil(10 * lambda_spat) + 8.
int tile_halo(const TvConfig& cfg);

double tv_objective(const HeightCube& g, const HeightCube& h, const TvConfig& cfg);
TvResult denoise(const HeightCube& h, const TvConfig& cfg);
/// Passes over the tiles when there is more than one. The temporal norm spans a
/// whole slice, so each tile's radius for slice t is lambda_temp scaled by the
/// share of the slice difference norm inside its window, taken from the
/// previous pass (the input cube for the first).
inline constexpr int kTileCouplingPasses = 2;

/// Solves each tile plus halo and keeps the tile centers.
/// tile_size <= 0 solves the whole cube as one tile. Output is independent of `workers`.
TiledTvResult denoise_tiled(const HeightCube& h, const TvConfig& cfg, int tile_size, int workers,
                            std::optional<int> halo = std::nullopt,
                            const std::function<void(const TileReport&, double)>& on_tile = {});

}  // namespace canopy
