#pragma once

// Discretization conventions shared by every module: uniform proper-time
// grids, endpoint data and worldlines stored as node sequences.
//
// Positions live on nodes s_i = i*ds, i = 0..n. Velocities are forward
// differences and live on interval midpoints, so a grid with n steps
// carries n velocity slots. Lattice integrals of velocity-dependent
// integrands use the midpoint rule with node averages as positions.

#include <cstddef>
#include <string>
#include <utility>
#include <vector>

#include "fokker/error.hpp"
#include "fokker/vec.hpp"

namespace fokker {

class GridSpec {
 public:
  GridSpec(std::size_t n_steps, double s_total) : n_steps_(n_steps) {
    if (n_steps == 0) throw DomainError("grid: n_steps must be >= 1");
    if (!(s_total > 0.0) || !std::isfinite(s_total))
      throw DomainError("grid: s_total must be positive and finite");
    ds_ = s_total / static_cast<double>(n_steps);
    // Store the product so that ds * n_steps == s_total holds bit-exactly.
    s_total_ = ds_ * static_cast<double>(n_steps);
  }

  std::size_t n_steps() const noexcept { return n_steps_; }
  std::size_t n_nodes() const noexcept { return n_steps_ + 1; }
  double s_total() const noexcept { return s_total_; }
  double ds() const noexcept { return ds_; }

  double node_time(std::size_t i) const noexcept { return ds_ * static_cast<double>(i); }
  double midpoint_time(std::size_t i) const noexcept {
    return ds_ * (static_cast<double>(i) + 0.5);
  }

  /// Lattice version of the integral of f over [0, S] (midpoint rule).
  template <class F>
  double midpoint_sum(F&& f) const {
    double acc = 0.0;
    for (std::size_t i = 0; i < n_steps_; ++i) acc += f(midpoint_time(i));
    return acc * ds_;
  }

 private:
  std::size_t n_steps_;
  double s_total_;
  double ds_;
};

template <std::size_t D>
struct Endpoints {
  Vec<D> x_in{};
  Vec<D> x_out{};

  Endpoints() = default;
  Endpoints(const Vec<D>& in, const Vec<D>& out) : x_in(in), x_out(out) {
    if (!all_finite(in) || !all_finite(out))
      throw DomainError("endpoints: all components must be finite");
  }
};

template <std::size_t D>
class Worldline {
 public:
  Worldline(GridSpec grid, std::vector<Vec<D>> nodes, int particle_index = 1)
      : grid_(grid), nodes_(std::move(nodes)), particle_(particle_index) {
    if (nodes_.size() != grid_.n_nodes())
      throw DomainError("worldline: expected " + std::to_string(grid_.n_nodes()) +
                        " nodes, got " + std::to_string(nodes_.size()));
    if (particle_ != 1 && particle_ != 2)
      throw DomainError("worldline: particle index must be 1 or 2");
  }

  const GridSpec& grid() const noexcept { return grid_; }
  const std::vector<Vec<D>>& nodes() const noexcept { return nodes_; }
  const Vec<D>& node(std::size_t i) const { return nodes_[i]; }
  const Vec<D>& front() const { return nodes_.front(); }
  const Vec<D>& back() const { return nodes_.back(); }
  int particle_index() const noexcept { return particle_; }
  std::size_t n_steps() const noexcept { return grid_.n_steps(); }
  double ds() const noexcept { return grid_.ds(); }

  Vec<D> midpoint(std::size_t i) const { return 0.5 * (nodes_[i] + nodes_[i + 1]); }

  /// Same node sequence traversed in the opposite direction.
  Worldline reversed() const {
    return Worldline(grid_, std::vector<Vec<D>>(nodes_.rbegin(), nodes_.rend()), particle_);
  }

  /// Same nodes, reparametrized over a different total proper time.
  Worldline with_total_time(double s_total) const {
    return Worldline(GridSpec(grid_.n_steps(), s_total), nodes_, particle_);
  }

  Worldline relabeled(int particle_index) const {
    return Worldline(grid_, nodes_, particle_index);
  }

 private:
  GridSpec grid_;
  std::vector<Vec<D>> nodes_;
  int particle_;
};

/// Forward difference quotients; entry i belongs to the interval (s_i, s_{i+1}).
template <std::size_t D>
std::vector<Vec<D>> finite_difference_velocity(const Worldline<D>& wl) {
  const auto& x = wl.nodes();
  const double ds = wl.ds();
  std::vector<Vec<D>> v;
  v.reserve(wl.n_steps());
  for (std::size_t i = 0; i + 1 < x.size(); ++i) v.push_back((x[i + 1] - x[i]) / ds);
  return v;
}

template <std::size_t D>
std::vector<Vec<D>> midpoint_positions(const Worldline<D>& wl) {
  std::vector<Vec<D>> m;
  m.reserve(wl.n_steps());
  for (std::size_t i = 0; i < wl.n_steps(); ++i) m.push_back(wl.midpoint(i));
  return m;
}

template <std::size_t D>
Worldline<D> linear_interpolant(const Vec<D>& x_in, const Vec<D>& x_out, const GridSpec& grid,
                                int particle_index = 1) {
  const auto n = grid.n_steps();
  std::vector<Vec<D>> nodes;
  nodes.reserve(n + 1);
  const Vec<D> delta = x_out - x_in;
  for (std::size_t i = 0; i <= n; ++i) {
    if (i == n) {
      nodes.push_back(x_out);
    } else {
      nodes.push_back(x_in + (static_cast<double>(i) / static_cast<double>(n)) * delta);
    }
  }
  return Worldline<D>(grid, std::move(nodes), particle_index);
}

template <std::size_t D>
Worldline<D> linear_interpolant(const Endpoints<D>& ends, const GridSpec& grid,
                                int particle_index = 1) {
  return linear_interpolant(ends.x_in, ends.x_out, grid, particle_index);
}

}  // namespace fokker
