#pragma once

#include <algorithm>
#include <cmath>
#include <numbers>

#include "circform/errors.hpp"

namespace circform {

inline constexpr double kPi = std::numbers::pi;
inline constexpr double kTwoPi = 2.0 * std::numbers::pi;

/// Point or displacement in the plane, centimetres.
struct Vec2 {
  double x = 0.0;
  double y = 0.0;

  constexpr Vec2& operator+=(Vec2 o) {
    x += o.x;
    y += o.y;
    return *this;
  }
  constexpr Vec2& operator-=(Vec2 o) {
    x -= o.x;
    y -= o.y;
    return *this;
  }
  friend constexpr Vec2 operator+(Vec2 a, Vec2 b) { return a += b; }
  friend constexpr Vec2 operator-(Vec2 a, Vec2 b) { return a -= b; }
  friend constexpr Vec2 operator*(double s, Vec2 v) { return {s * v.x, s * v.y}; }
  friend constexpr Vec2 operator*(Vec2 v, double s) { return s * v; }
  friend constexpr bool operator==(Vec2, Vec2) = default;

  double norm() const { return std::hypot(x, y); }
  double angle() const { return std::atan2(y, x); }
  static Vec2 polar(double r, double theta) { return {r * std::cos(theta), r * std::sin(theta)}; }
};

inline double dot(Vec2 a, Vec2 b) { return a.x * b.x + a.y * b.y; }
inline double distance(Vec2 a, Vec2 b) { return (a - b).norm(); }

// Rotate by +90 degrees.
inline constexpr Vec2 perp(Vec2 v) { return {-v.y, v.x}; }

inline Vec2 rotate(Vec2 v, double theta) {
  const double c = std::cos(theta);
  const double s = std::sin(theta);
  return {c * v.x - s * v.y, s * v.x + c * v.y};
}

enum class Orientation { CounterClockwise, Clockwise };

/// +1 for counter-clockwise traversal, -1 for clockwise.
inline constexpr double orientation_sign(Orientation o) {
  return o == Orientation::CounterClockwise ? 1.0 : -1.0;
}

struct CirclePath {
  Vec2 center{};
  double radius = 70.0;
  Orientation orientation = Orientation::CounterClockwise;
};

/// Maps any finite angle to (-pi, pi].
inline double wrap_angle(double a) {
  double r = std::remainder(a, kTwoPi);
  if (r <= -kPi) r += kTwoPi;
  return r;
}

struct Projection {
  Vec2 point;
  // Positive inside the circle, negative outside.
  double signed_distance;
};

inline Projection project_to_circle(Vec2 p, const CirclePath& c) {
  const Vec2 rel = p - c.center;
  const double r = rel.norm();
  if (r < 1e-9) throw DegenerateProjection("projection onto circle undefined at its center");
  return {c.center + (c.radius / r) * rel, c.radius - r};
}

/// Heading of the tangent at a point on the circle, pointing along the
/// traversal direction.
inline double tangent_heading(Vec2 on_circle, const CirclePath& c) {
  const Vec2 rel = on_circle - c.center;
  if (std::abs(rel.norm() - c.radius) > 1e-6) throw NotOnCircle("point is not on the circle path");
  return wrap_angle(rel.angle() + orientation_sign(c.orientation) * (kPi / 2.0));
}

/// Lookahead target on the path: the intersection of the path with the
/// circle of radius `lookahead` around `p` that lies ahead of p's projection
/// in the traversal direction. Falls back to the projection itself when the
/// two circles do not meet.
inline Vec2 traction_point(Vec2 p, const CirclePath& c, double lookahead) {
  if (!(lookahead > 0.0)) throw InvalidArgument("lookahead radius must be positive");
  const Projection proj = project_to_circle(p, c);
  const Vec2 rel = p - c.center;
  const double dist = rel.norm();
  const double R = c.radius;
  if (std::abs(proj.signed_distance) > lookahead || dist + R < lookahead) return proj.point;

  const Vec2 u = (1.0 / dist) * rel;
  // Offset of the radical line from the center along u, and half-chord length.
  const double a = (dist * dist + R * R - lookahead * lookahead) / (2.0 * dist);
  const double h = std::sqrt(std::max(0.0, R * R - a * a));
  return c.center + a * u + (orientation_sign(c.orientation) * h) * perp(u);
}

/// Bearing of `target` seen from `from` relative to `heading`.
inline double relative_bearing(Vec2 from, double heading, Vec2 target) {
  const Vec2 rel = target - from;
  if (rel.norm() < 1e-9) throw CoincidentPoints("bearing between coincident points");
  return wrap_angle(rel.angle() - heading);
}

}  // namespace circform
