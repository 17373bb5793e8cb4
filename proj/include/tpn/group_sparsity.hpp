#pragma once

#include <vector>

#include "tpn/common.hpp"

namespace tpn {

/// Layout of a code vector on a 2-D lattice: unit (x, y) is entry y * width + x.
struct CellGrid {
  int width = 0;
  int height = 0;
  int size() const { return width * height; }
};

struct GroupSparsityConfig {
  double alpha = 0.5;
  /// Gaussian pool width in cell units.
  double sigma = 1.5;
  /// Offsets with |delta| <= support_radius (Euclidean) belong to a pool.
  /// Negative means ceil(3 sigma).
  int support_radius = -1;
  double epsilon = 1e-6;
  /// Pools wrap around the grid (torus) instead of clipping at its edge.
  bool wrap = false;

  int radius() const { return support_radius >= 0 ? support_radius : static_cast<int>(std::ceil(3.0 * sigma)); }
};

/// Singular pool (epsilon = 0 and every member zero) hit by the gradient.
class SingularPool : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

struct PoolOffset {
  int dx;
  int dy;
  double weight;  // exp(-|delta|^2 / 2 sigma^2)
};

inline std::vector<PoolOffset> pool_offsets(const GroupSparsityConfig& cfg) {
  require(cfg.sigma > 0, "group sparsity: sigma must be positive");
  require(cfg.epsilon >= 0, "group sparsity: epsilon must be non-negative");
  const int r = cfg.radius();
  std::vector<PoolOffset> out;
  for (int dy = -r; dy <= r; ++dy)
    for (int dx = -r; dx <= r; ++dx) {
      const int d2 = dx * dx + dy * dy;
      if (d2 > r * r) continue;
      out.push_back({dx, dy, std::exp(-d2 / (2.0 * cfg.sigma * cfg.sigma))});
    }
  return out;
}

/// Index of cell (x + dx, y + dy), or -1 when it falls off a clipped grid.
inline int grid_neighbor(const CellGrid& grid, int x, int y, int dx, int dy, bool wrap) {
  int nx = x + dx;
  int ny = y + dy;
  if (wrap) {
    nx = ((nx % grid.width) + grid.width) % grid.width;
    ny = ((ny % grid.height) + grid.height) % grid.height;
  } else if (nx < 0 || ny < 0 || nx >= grid.width || ny >= grid.height) {
    return -1;
  }
  return ny * grid.width + nx;
}

/// Weighted pool energies sum_delta g(delta) z_{r+delta}^2 for every pool center r.
template <typename Derived>
Vec<typename Derived::Scalar> pool_energies(const Eigen::MatrixBase<Derived>& z, const CellGrid& grid,
                                            const GroupSparsityConfig& cfg) {
  using Scalar = typename Derived::Scalar;
  require(z.size() == grid.size(), "group sparsity: code size does not match grid");
  const auto offsets = pool_offsets(cfg);
  Vec<Scalar> energy = Vec<Scalar>::Zero(grid.size());
  for (int y = 0; y < grid.height; ++y)
    for (int x = 0; x < grid.width; ++x) {
      Scalar acc = 0;
      for (const auto& o : offsets) {
        const int j = grid_neighbor(grid, x, y, o.dx, o.dy, cfg.wrap);
        if (j >= 0) acc += static_cast<Scalar>(o.weight) * z(j) * z(j);
      }
      energy(y * grid.width + x) = acc;
    }
  return energy;
}

/// alpha * sum_r [sqrt(eps + pool_r) - sqrt(eps)]; zero at z = 0.
template <typename Derived>
typename Derived::Scalar group_penalty(const Eigen::MatrixBase<Derived>& z, const CellGrid& grid,
                                       const GroupSparsityConfig& cfg) {
  using Scalar = typename Derived::Scalar;
  const Vec<Scalar> pools = pool_energies(z, grid, cfg);
  const Scalar eps = static_cast<Scalar>(cfg.epsilon);
  const Scalar base = std::sqrt(eps);
  Scalar total = 0;
  for (Eigen::Index r = 0; r < pools.size(); ++r) total += std::sqrt(eps + pools(r)) - base;
  return static_cast<Scalar>(cfg.alpha) * total;
}

/// Exact gradient: d/dz_j = alpha z_j sum_{r} g(j - r) / sqrt(eps + pool_r).
/// Throws SingularPool when epsilon = 0 and a pool touching a unit is empty.
template <typename Derived>
Vec<typename Derived::Scalar> group_penalty_grad(const Eigen::MatrixBase<Derived>& z, const CellGrid& grid,
                                                 const GroupSparsityConfig& cfg) {
  using Scalar = typename Derived::Scalar;
  const Vec<Scalar> pools = pool_energies(z, grid, cfg);
  const auto offsets = pool_offsets(cfg);
  const Scalar eps = static_cast<Scalar>(cfg.epsilon);
  Vec<Scalar> inv_norm(pools.size());
  for (Eigen::Index r = 0; r < pools.size(); ++r) {
    const Scalar n = std::sqrt(eps + pools(r));
    inv_norm(r) = n > 0 ? Scalar(1) / n : std::numeric_limits<Scalar>::infinity();
  }
  Vec<Scalar> grad = Vec<Scalar>::Zero(z.size());
  for (int y = 0; y < grid.height; ++y)
    for (int x = 0; x < grid.width; ++x) {
      const int j = y * grid.width + x;
      Scalar acc = 0;
      for (const auto& o : offsets) {
        // pools containing j are centered at j - delta
        const int r = grid_neighbor(grid, x, y, -o.dx, -o.dy, cfg.wrap);
        if (r < 0) continue;
        if (!std::isfinite(inv_norm(r)))
          throw SingularPool("group_penalty_grad: epsilon = 0 with an all-zero pool");
        acc += static_cast<Scalar>(o.weight) * inv_norm(r);
      }
      grad(j) = static_cast<Scalar>(cfg.alpha) * z(j) * acc;
    }
  return grad;
}

/// Complex-cell output sqrt(sum_delta g(delta) z_{r+delta}^2) at every pool center.
template <typename Derived>
Vec<typename Derived::Scalar> complex_pool_activation(const Eigen::MatrixBase<Derived>& z, const CellGrid& grid,
                                                      const GroupSparsityConfig& cfg) {
  return pool_energies(z, grid, cfg).cwiseSqrt();
}

/// Incremental pool bookkeeping for coordinate-wise inference: keeps every
/// pool energy current while single units change.
class PoolTracker {
 public:
  PoolTracker(const CellGrid& grid, const GroupSparsityConfig& cfg)
      : grid_(grid), cfg_(cfg), offsets_(pool_offsets(cfg)), pools_(Eigen::VectorXd::Zero(grid.size())) {}

  void reset(const Eigen::VectorXd& z) { pools_ = pool_energies(z, grid_, cfg_); }

  const Eigen::VectorXd& pools() const { return pools_; }
  const CellGrid& grid() const { return grid_; }
  const GroupSparsityConfig& config() const { return cfg_; }

  /// Applies z_j: old -> new to every pool containing j.
  void update(int j, double old_value, double new_value) {
    const double diff = new_value * new_value - old_value * old_value;
    if (diff == 0) return;
    const int x = j % grid_.width;
    const int y = j / grid_.width;
    for (const auto& o : offsets_) {
      const int r = grid_neighbor(grid_, x, y, -o.dx, -o.dy, cfg_.wrap);
      if (r >= 0) pools_(r) += o.weight * diff;
    }
  }

  /// Calls fn(pool_index, weight) for every pool containing unit j.
  template <typename Fn>
  void for_each_pool_of(int j, Fn&& fn) const {
    const int x = j % grid_.width;
    const int y = j / grid_.width;
    for (const auto& o : offsets_) {
      const int r = grid_neighbor(grid_, x, y, -o.dx, -o.dy, cfg_.wrap);
      if (r >= 0) fn(r, o.weight);
    }
  }

  double penalty() const {
    const double base = std::sqrt(cfg_.epsilon);
    double total = 0.0;
    for (Eigen::Index r = 0; r < pools_.size(); ++r) total += std::sqrt(cfg_.epsilon + std::max(pools_(r), 0.0)) - base;
    return cfg_.alpha * total;
  }

 private:
  CellGrid grid_;
  GroupSparsityConfig cfg_;
  std::vector<PoolOffset> offsets_;
  Eigen::VectorXd pools_;
};

/// Minimizes a * v^2 - 2 b v + alpha * sum_r sqrt(eps + c_r + g_r v^2) over v,
/// where c_r is the pool energy without unit j. The objective is convex and
/// even in v apart from the linear term, so the minimizer has the sign of b;
/// it is found by safeguarded Newton on the derivative.
double group_scalar_minimizer(const PoolTracker& tracker, int j, double current, double a, double b);

}  // namespace tpn
