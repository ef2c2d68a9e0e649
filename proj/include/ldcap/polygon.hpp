#pragma once

// Small planar toolkit for 2-D slices: convex clipping by half-planes,
// area, convexity and point tests.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <vector>

namespace ldcap {

struct Point2 {
  double u = 0.0;
  double v = 0.0;
};

/// { (u, v) : a u + b v <= c }
struct HalfPlane {
  double a = 0.0;
  double b = 0.0;
  double c = 0.0;

  double slack(const Point2& p) const { return c - a * p.u - b * p.v; }
};

/// Vertex list, counterclockwise, first vertex not repeated.
using Polygon = std::vector<Point2>;

inline Polygon box_polygon(double u0, double u1, double v0, double v1) {
  return {{u0, v0}, {u1, v0}, {u1, v1}, {u0, v1}};
}

inline double signed_area(const Polygon& poly) {
  double s = 0.0;
  for (std::size_t i = 0; i < poly.size(); ++i) {
    const Point2& p = poly[i];
    const Point2& q = poly[(i + 1) % poly.size()];
    s += p.u * q.v - q.u * p.v;
  }
  return 0.5 * s;
}

inline double area(const Polygon& poly) { return std::abs(signed_area(poly)); }

/// Sutherland-Hodgman against one half-plane. Orientation is preserved.
inline Polygon clip(const Polygon& poly, const HalfPlane& h) {
  Polygon out;
  if (poly.empty()) return out;
  for (std::size_t i = 0; i < poly.size(); ++i) {
    const Point2& p = poly[i];
    const Point2& q = poly[(i + 1) % poly.size()];
    const double sp = h.slack(p);
    const double sq = h.slack(q);
    if (sp >= 0.0) out.push_back(p);
    if ((sp >= 0.0) != (sq >= 0.0)) {
      const double t = sp / (sp - sq);
      out.push_back({p.u + t * (q.u - p.u), p.v + t * (q.v - p.v)});
    }
  }
  // drop consecutive duplicates produced by vertices on the line
  Polygon clean;
  for (const Point2& p : out) {
    if (clean.empty() || std::hypot(p.u - clean.back().u, p.v - clean.back().v) > 1e-14) clean.push_back(p);
  }
  while (clean.size() > 1 && std::hypot(clean.front().u - clean.back().u, clean.front().v - clean.back().v) <= 1e-14) {
    clean.pop_back();
  }
  return clean;
}

/// Cross-product sign test on the vertex chain (collinear runs allowed).
inline bool is_convex(const Polygon& poly, double tol = 1e-12) {
  if (poly.size() < 3) return false;
  int sign = 0;
  for (std::size_t i = 0; i < poly.size(); ++i) {
    const Point2& a = poly[i];
    const Point2& b = poly[(i + 1) % poly.size()];
    const Point2& c = poly[(i + 2) % poly.size()];
    const double cross = (b.u - a.u) * (c.v - b.v) - (b.v - a.v) * (c.u - b.u);
    const double scale = std::hypot(b.u - a.u, b.v - a.v) * std::hypot(c.u - b.u, c.v - b.v);
    if (std::abs(cross) <= tol * std::max(scale, 1e-300)) continue;
    const int s = cross > 0.0 ? 1 : -1;
    if (sign == 0) sign = s;
    if (s != sign) return false;
  }
  return sign != 0;
}

/// Strict interior test for a counterclockwise convex polygon.
inline bool convex_contains(const Polygon& poly, const Point2& p) {
  if (poly.size() < 3) return false;
  for (std::size_t i = 0; i < poly.size(); ++i) {
    const Point2& a = poly[i];
    const Point2& b = poly[(i + 1) % poly.size()];
    if ((b.u - a.u) * (p.v - a.v) - (b.v - a.v) * (p.u - a.u) <= 0.0) return false;
  }
  return true;
}

struct BoundingBox {
  double u0, u1, v0, v1;
};

inline BoundingBox bounds(const Polygon& poly) {
  BoundingBox b{poly.front().u, poly.front().u, poly.front().v, poly.front().v};
  for (const Point2& p : poly) {
    b.u0 = std::min(b.u0, p.u);
    b.u1 = std::max(b.u1, p.u);
    b.v0 = std::min(b.v0, p.v);
    b.v1 = std::max(b.v1, p.v);
  }
  return b;
}

}  // namespace ldcap
