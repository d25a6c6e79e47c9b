#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <array>
#include <cmath>
#include <string>
#include <vector>

#include "lrq/ops.hpp"

namespace lrq {

enum class FitOrder { kLinear, kQuadratic };

/// k nearest neighbours of every point (the point itself excluded), sorted by
/// (distance, index). Uses a uniform bucket grid so cost stays near O(N·k).
class NeighborSearch {
 public:
  explicit NeighborSearch(const Tensor& coords) : coords_(coords) {
    if (coords.rank() != 2 || coords.cols() != 3) {
      throw DimensionError("coords must be N x 3, got " + shape_str(coords.shape()));
    }
    n_ = coords.rows();
    if (n_ == 0) throw DimensionError("empty point cloud");
    for (std::size_t a = 0; a < 3; ++a) {
      lo_[a] = hi_[a] = coords[a];
      for (std::size_t i = 0; i < n_; ++i) {
        lo_[a] = std::min(lo_[a], coords[i * 3 + a]);
        hi_[a] = std::max(hi_[a], coords[i * 3 + a]);
      }
    }
    // About two points per occupied cell on a volume fill.
    double vol = 1.0;
    std::size_t live = 0;
    double ext_max = 0.0;
    for (std::size_t a = 0; a < 3; ++a) ext_max = std::max(ext_max, hi_[a] - lo_[a]);
    if (ext_max <= 0.0) ext_max = 1.0;
    for (std::size_t a = 0; a < 3; ++a) {
      if (hi_[a] - lo_[a] > 1e-9 * ext_max) {
        vol *= hi_[a] - lo_[a];
        ++live;
      }
    }
    cell_ = live == 0 ? 1.0 : std::pow(vol * 2.0 / static_cast<double>(n_), 1.0 / static_cast<double>(live));
    if (!(cell_ > 0.0) || !std::isfinite(cell_)) cell_ = ext_max;
    for (std::size_t a = 0; a < 3; ++a) {
      dims_[a] = std::max<std::size_t>(1, static_cast<std::size_t>((hi_[a] - lo_[a]) / cell_) + 1);
      dims_[a] = std::min<std::size_t>(dims_[a], 1024);
    }
    start_.assign(dims_[0] * dims_[1] * dims_[2] + 1, 0);
    std::vector<std::size_t> cell_of(n_);
    for (std::size_t i = 0; i < n_; ++i) {
      cell_of[i] = flat(cell_coord(i));
      ++start_[cell_of[i] + 1];
    }
    for (std::size_t c = 1; c < start_.size(); ++c) start_[c] += start_[c - 1];
    items_.resize(n_);
    std::vector<std::size_t> fill(start_.begin(), start_.end() - 1);
    for (std::size_t i = 0; i < n_; ++i) items_[fill[cell_of[i]]++] = i;
  }

  /// The k nearest other points of point i.
  std::vector<std::size_t> query(std::size_t i, std::size_t k) const {
    if (k >= n_) throw DimensionError("need more than " + std::to_string(k) + " points, have " + std::to_string(n_));
    const auto c = cell_coord(i);
    std::vector<std::pair<double, std::size_t>> cand;
    const std::size_t max_ring = std::max({dims_[0], dims_[1], dims_[2]});
    for (std::size_t r = 0; r <= max_ring; ++r) {
      visit_ring(c, r, [&](std::size_t j) {
        if (j != i) cand.emplace_back(dist2(i, j), j);
      });
      if (cand.size() >= k) {
        std::nth_element(cand.begin(), cand.begin() + static_cast<std::ptrdiff_t>(k - 1), cand.end());
        const double kth = cand[k - 1].first;
        const double reach = static_cast<double>(r) * cell_;
        if (kth < reach * reach) break;
      }
    }
    std::sort(cand.begin(), cand.end());
    std::vector<std::size_t> out(k);
    for (std::size_t j = 0; j < k; ++j) out[j] = cand[j].second;
    return out;
  }

  double dist2(std::size_t i, std::size_t j) const {
    double s = 0.0;
    for (std::size_t a = 0; a < 3; ++a) {
      const double d = coords_[i * 3 + a] - coords_[j * 3 + a];
      s += d * d;
    }
    return s;
  }

 private:
  std::array<std::size_t, 3> cell_coord(std::size_t i) const {
    std::array<std::size_t, 3> c{};
    for (std::size_t a = 0; a < 3; ++a) {
      const double t = (coords_[i * 3 + a] - lo_[a]) / cell_;
      c[a] = std::min(dims_[a] - 1, static_cast<std::size_t>(std::max(0.0, t)));
    }
    return c;
  }
  std::size_t flat(const std::array<std::size_t, 3>& c) const { return (c[0] * dims_[1] + c[1]) * dims_[2] + c[2]; }

  template <class F>
  void visit_ring(const std::array<std::size_t, 3>& c, std::size_t r, F&& f) const {
    const long rr = static_cast<long>(r);
    for (long dx = -rr; dx <= rr; ++dx) {
      for (long dy = -rr; dy <= rr; ++dy) {
        for (long dz = -rr; dz <= rr; ++dz) {
          if (std::max({std::labs(dx), std::labs(dy), std::labs(dz)}) != rr) continue;
          const long x = static_cast<long>(c[0]) + dx, y = static_cast<long>(c[1]) + dy,
                     z = static_cast<long>(c[2]) + dz;
          if (x < 0 || y < 0 || z < 0 || x >= static_cast<long>(dims_[0]) || y >= static_cast<long>(dims_[1]) ||
              z >= static_cast<long>(dims_[2])) {
            continue;
          }
          const std::size_t cell = flat({std::size_t(x), std::size_t(y), std::size_t(z)});
          for (std::size_t s = start_[cell]; s < start_[cell + 1]; ++s) f(items_[s]);
        }
      }
    }
  }

  const Tensor& coords_;
  std::size_t n_ = 0;
  std::array<double, 3> lo_{}, hi_{};
  double cell_ = 1.0;
  std::array<std::size_t, 3> dims_{};
  std::vector<std::size_t> start_, items_;
};

/// Gradient extraction by local weighted least squares. Row i of the operator
/// holds weights w_ij (3 per neighbour, plus the centre) such that
/// ∇f(x_i) ≈ Σ_j w_ij f_j. A quadratic fit reproduces fields up to second
/// order exactly; where the neighbourhood cannot support it the point falls
/// back to a linear fit, which is exact for linear fields.
struct ScatteredGradOperator {
  std::size_t n = 0;
  std::size_t k = 0;
  std::vector<std::size_t> offsets;  // CSR row starts, size n + 1
  std::vector<std::size_t> cols;
  std::vector<std::array<double, 3>> weights;
  std::vector<FitOrder> fit;     // order actually used per point
  std::vector<bool> interior;    // quadratic at the point and all its neighbours
  std::vector<std::size_t> interior_index;

  std::size_t num_points() const { return n; }
};

namespace detail {

inline constexpr double kMaxFitCondition = 1e10;

// Solves the weighted fit at one point. Returns false if the basis is rank
// deficient or too ill-conditioned to trust.
inline bool fit_rows(const Tensor& coords, std::size_t i, const std::vector<std::size_t>& nb, FitOrder order,
                     double bw, Eigen::MatrixXd& grad_rows) {
  const std::size_t k = nb.size();
  const int terms = order == FitOrder::kQuadratic ? 9 : 3;
  Eigen::MatrixXd a(k, terms);
  Eigen::VectorXd sw(k);
  for (std::size_t j = 0; j < k; ++j) {
    double d[3];
    double r2 = 0.0;
    for (std::size_t c = 0; c < 3; ++c) {
      d[c] = (coords[nb[j] * 3 + c] - coords[i * 3 + c]) / bw;
      r2 += d[c] * d[c];
    }
    sw(j) = std::exp(-0.5 * r2);  // √ of the Gaussian weight exp(−r²)
    a(j, 0) = d[0];
    a(j, 1) = d[1];
    a(j, 2) = d[2];
    if (terms == 9) {
      a(j, 3) = 0.5 * d[0] * d[0];
      a(j, 4) = 0.5 * d[1] * d[1];
      a(j, 5) = 0.5 * d[2] * d[2];
      a(j, 6) = d[0] * d[1];
      a(j, 7) = d[0] * d[2];
      a(j, 8) = d[1] * d[2];
    }
  }
  const Eigen::MatrixXd wa = sw.asDiagonal() * a;
  Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(wa);
  if (qr.rank() < terms) return false;
  const auto r = qr.matrixR().topLeftCorner(terms, terms).diagonal().cwiseAbs();
  if (r.minCoeff() == 0.0 || r.maxCoeff() / r.minCoeff() > kMaxFitCondition) return false;
  const Eigen::MatrixXd sol = qr.solve(Eigen::MatrixXd(sw.asDiagonal()));  // terms × k
  grad_rows = sol.topRows(3) / bw;
  return true;
}

}  // namespace detail

inline ScatteredGradOperator build_grad_operator(const Tensor& coords, std::size_t k_neighbors = 16,
                                                 FitOrder order = FitOrder::kQuadratic) {
  if (coords.rank() != 2 || coords.cols() != 3) {
    throw DimensionError("coords must be N x 3, got " + shape_str(coords.shape()));
  }
  const std::size_t n = coords.rows();
  if (k_neighbors < 5) throw ConfigError("k_neighbors must be at least 5");
  if (n <= k_neighbors) {
    throw DimensionError("gradient operator needs more than " + std::to_string(k_neighbors) + " points, got " +
                         std::to_string(n));
  }
  NeighborSearch search(coords);
  ScatteredGradOperator op;
  op.n = n;
  op.k = k_neighbors;
  op.offsets.assign(1, 0);
  op.fit.resize(n);
  std::vector<std::vector<std::size_t>> nbs(n);
  for (std::size_t i = 0; i < n; ++i) {
    nbs[i] = search.query(i, k_neighbors);
    double bw = 0.0;
    for (std::size_t j : nbs[i]) bw += std::sqrt(search.dist2(i, j));
    bw /= static_cast<double>(k_neighbors);
    if (!(bw > 0.0)) throw DimensionError("degenerate neighbourhood at point " + std::to_string(i) + ": all neighbours coincide");

    Eigen::MatrixXd rows;
    FitOrder used = order;
    if (!(order == FitOrder::kQuadratic && detail::fit_rows(coords, i, nbs[i], FitOrder::kQuadratic, bw, rows))) {
      used = FitOrder::kLinear;
      if (!detail::fit_rows(coords, i, nbs[i], FitOrder::kLinear, bw, rows)) {
        throw DimensionError("degenerate neighbourhood at point " + std::to_string(i) +
                             ": neighbours span fewer than 3 directions");
      }
    }
    op.fit[i] = used;
    // ∇f_i = Σ_j w_j (f_j − f_i): the centre weight is minus the row sum.
    std::array<double, 3> centre{0.0, 0.0, 0.0};
    for (std::size_t j = 0; j < k_neighbors; ++j) {
      op.cols.push_back(nbs[i][j]);
      op.weights.push_back({rows(0, j), rows(1, j), rows(2, j)});
      for (std::size_t c = 0; c < 3; ++c) centre[c] -= rows(c, j);
    }
    op.cols.push_back(i);
    op.weights.push_back(centre);
    op.offsets.push_back(op.cols.size());
  }
  op.interior.assign(n, false);
  for (std::size_t i = 0; i < n; ++i) {
    bool ok = op.fit[i] == FitOrder::kQuadratic || order == FitOrder::kLinear;
    for (std::size_t j : nbs[i]) ok = ok && (op.fit[j] == FitOrder::kQuadratic || order == FitOrder::kLinear);
    op.interior[i] = ok;
    if (ok) op.interior_index.push_back(i);
  }
  return op;
}

/// Gradient of every column of f (N × m) at every point: N × 3m, where column
/// 3a + b holds ∂f_a/∂x_b. The operator is referenced by the tape and must
/// outlive any backward pass through the result.
inline Tensor grad_apply(const ScatteredGradOperator& op, const Tensor& f) {
  if (f.rank() != 2 || f.rows() != op.n) {
    throw DimensionError("gradient operator built for " + std::to_string(op.n) + " points, field is " +
                         shape_str(f.shape()));
  }
  const std::size_t n = op.n, m = f.cols();
  Buffer out(n * 3 * m, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    double* oi = out.data() + i * 3 * m;
    for (std::size_t e = op.offsets[i]; e < op.offsets[i + 1]; ++e) {
      const double* fj = f.data() + op.cols[e] * m;
      const auto& w = op.weights[e];
      for (std::size_t a = 0; a < m; ++a)
        for (std::size_t b = 0; b < 3; ++b) oi[3 * a + b] += w[b] * fj[a];
    }
  }
  return detail::finish(OpKind::kSparseGradient, Tensor({n, 3 * m}, std::move(out)), {&f},
                        [&op, n, m](std::span<const double> g, std::span<Buffer* const> in) {
                          Buffer& d = *in[0];
                          for (std::size_t i = 0; i < n; ++i) {
                            const double* gi = g.data() + i * 3 * m;
                            for (std::size_t e = op.offsets[i]; e < op.offsets[i + 1]; ++e) {
                              double* dj = d.data() + op.cols[e] * m;
                              const auto& w = op.weights[e];
                              for (std::size_t a = 0; a < m; ++a)
                                dj[a] += w[0] * gi[3 * a] + w[1] * gi[3 * a + 1] + w[2] * gi[3 * a + 2];
                            }
                          }
                        });
}

}  // namespace lrq
