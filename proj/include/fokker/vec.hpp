#pragma once

#include <array>
#include <cmath>
#include <cstddef>

namespace fokker {

/// Fixed-size real vector: 4 for spacetime points, 3 for the spatial
/// part used by the modified theory, 1 or 2 for reduced test lattices.
template <std::size_t D>
using Vec = std::array<double, D>;

using Vec4 = Vec<4>;
using Vec3 = Vec<3>;

template <std::size_t D>
constexpr Vec<D> operator+(const Vec<D>& a, const Vec<D>& b) {
  Vec<D> r{};
  for (std::size_t k = 0; k < D; ++k) r[k] = a[k] + b[k];
  return r;
}

template <std::size_t D>
constexpr Vec<D> operator-(const Vec<D>& a, const Vec<D>& b) {
  Vec<D> r{};
  for (std::size_t k = 0; k < D; ++k) r[k] = a[k] - b[k];
  return r;
}

template <std::size_t D>
constexpr Vec<D> operator*(double s, const Vec<D>& a) {
  Vec<D> r{};
  for (std::size_t k = 0; k < D; ++k) r[k] = s * a[k];
  return r;
}

template <std::size_t D>
constexpr Vec<D> operator/(const Vec<D>& a, double s) {
  Vec<D> r{};
  for (std::size_t k = 0; k < D; ++k) r[k] = a[k] / s;
  return r;
}

/// Positive-definite dot product over all components.
template <std::size_t D>
constexpr double euclidean_dot(const Vec<D>& a, const Vec<D>& b) {
  double s = 0.0;
  for (std::size_t k = 0; k < D; ++k) s += a[k] * b[k];
  return s;
}

/// Signature (+,-,-,-): component 0 is time, the rest are spatial.
template <std::size_t D>
constexpr double minkowski_dot(const Vec<D>& a, const Vec<D>& b) {
  double s = a[0] * b[0];
  for (std::size_t k = 1; k < D; ++k) s -= a[k] * b[k];
  return s;
}

template <std::size_t D>
bool all_finite(const Vec<D>& a) {
  for (double x : a)
    if (!std::isfinite(x)) return false;
  return true;
}

/// Assembles a spacetime point from a time coordinate and a spatial vector.
inline Vec4 join_time(double x0, const Vec3& spatial) {
  return {x0, spatial[0], spatial[1], spatial[2]};
}

inline Vec3 spatial_part(const Vec4& x) { return {x[1], x[2], x[3]}; }

}  // namespace fokker
