#pragma once

#include <array>
#include <cmath>
#include <map>
#include <utility>
#include <vector>

#include "lrq/tensor.hpp"

namespace lrq {

using Vec3 = std::array<double, 3>;

struct TriMesh {
  std::vector<Vec3> vertices;
  std::vector<std::array<std::size_t, 3>> faces;  // counter-clockwise seen from outside
};

inline Vec3 cross(const Vec3& a, const Vec3& b) {
  return {a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0]};
}
inline double norm(const Vec3& a) { return std::sqrt(a[0] * a[0] + a[1] * a[1] + a[2] * a[2]); }

/// Icosahedron subdivided `levels` times, vertices projected to the sphere.
inline TriMesh icosphere(int levels, double radius = 1.0) {
  const double t = (1.0 + std::sqrt(5.0)) / 2.0;
  TriMesh m;
  m.vertices = {{-1, t, 0}, {1, t, 0}, {-1, -t, 0}, {1, -t, 0}, {0, -1, t}, {0, 1, t},
                {0, -1, -t}, {0, 1, -t}, {t, 0, -1}, {t, 0, 1}, {-t, 0, -1}, {-t, 0, 1}};
  m.faces = {{0, 11, 5}, {0, 5, 1},  {0, 1, 7},   {0, 7, 10}, {0, 10, 11}, {1, 5, 9}, {5, 11, 4},
             {11, 10, 2}, {10, 7, 6}, {7, 1, 8},  {3, 9, 4},  {3, 4, 2},   {3, 2, 6}, {3, 6, 8},
             {3, 8, 9},  {4, 9, 5},  {2, 4, 11}, {6, 2, 10}, {8, 6, 7},   {9, 8, 1}};
  auto project = [radius](Vec3 v) {
    const double s = radius / norm(v);
    return Vec3{v[0] * s, v[1] * s, v[2] * s};
  };
  for (auto& v : m.vertices) v = project(v);
  for (int l = 0; l < levels; ++l) {
    std::map<std::pair<std::size_t, std::size_t>, std::size_t> mid;
    auto midpoint = [&](std::size_t a, std::size_t b) {
      const auto key = std::minmax(a, b);
      auto it = mid.find(key);
      if (it != mid.end()) return it->second;
      const Vec3& p = m.vertices[a];
      const Vec3& q = m.vertices[b];
      m.vertices.push_back(project({(p[0] + q[0]) / 2, (p[1] + q[1]) / 2, (p[2] + q[2]) / 2}));
      mid.emplace(key, m.vertices.size() - 1);
      return m.vertices.size() - 1;
    };
    std::vector<std::array<std::size_t, 3>> next;
    next.reserve(m.faces.size() * 4);
    for (const auto& f : m.faces) {
      const std::size_t a = midpoint(f[0], f[1]), b = midpoint(f[1], f[2]), c = midpoint(f[2], f[0]);
      next.push_back({f[0], a, c});
      next.push_back({f[1], b, a});
      next.push_back({f[2], c, b});
      next.push_back({a, b, c});
    }
    m.faces = std::move(next);
  }
  return m;
}

/// Flat-face quadrature: centroid, outward unit normal and area per face.
struct FaceQuadrature {
  Tensor centroid;  // F×3
  Tensor normal;    // F×3
  Tensor area;      // F×1
};

inline FaceQuadrature face_quadrature(const TriMesh& m) {
  const std::size_t f = m.faces.size();
  Buffer c(f * 3), nrm(f * 3), ar(f);
  for (std::size_t i = 0; i < f; ++i) {
    const Vec3& a = m.vertices[m.faces[i][0]];
    const Vec3& b = m.vertices[m.faces[i][1]];
    const Vec3& d = m.vertices[m.faces[i][2]];
    const Vec3 n = cross({b[0] - a[0], b[1] - a[1], b[2] - a[2]}, {d[0] - a[0], d[1] - a[1], d[2] - a[2]});
    const double len = norm(n);
    ar[i] = 0.5 * len;
    for (std::size_t k = 0; k < 3; ++k) {
      c[i * 3 + k] = (a[k] + b[k] + d[k]) / 3.0;
      nrm[i * 3 + k] = n[k] / len;
    }
  }
  return {Tensor({f, 3}, std::move(c)), Tensor({f, 3}, std::move(nrm)), Tensor({f, 1}, std::move(ar))};
}

}  // namespace lrq
