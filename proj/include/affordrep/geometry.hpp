#pragma once

#include <array>
#include <cmath>
#include <cstddef>
#include <numbers>
#include <vector>

namespace affordrep {

inline constexpr double kPi = std::numbers::pi;

struct Vec2 {
  double x = 0.0;
  double y = 0.0;

  Vec2 operator+(Vec2 o) const { return {x + o.x, y + o.y}; }
  Vec2 operator-(Vec2 o) const { return {x - o.x, y - o.y}; }
  Vec2 operator*(double k) const { return {x * k, y * k}; }
  bool operator==(const Vec2&) const = default;
};

inline double dot(Vec2 a, Vec2 b) { return a.x * b.x + a.y * b.y; }
inline double cross(Vec2 a, Vec2 b) { return a.x * b.y - a.y * b.x; }
inline double norm(Vec2 a) { return std::hypot(a.x, a.y); }
inline Vec2 unit_from_heading(double h) { return {std::cos(h), std::sin(h)}; }
// Left-hand normal of a direction (rotated +90 degrees).
inline Vec2 left_normal(Vec2 d) { return {-d.y, d.x}; }

// Wraps an angle into [-pi, pi).
double wrap_angle(double a);

struct Pose {
  double x = 0.0;
  double y = 0.0;
  double heading = 0.0;

  Vec2 position() const { return {x, y}; }
  bool operator==(const Pose&) const = default;
};

/// Result of projecting a point onto a polyline. `lateral` is positive to the
/// left of the direction of travel.
struct Projection {
  double s = 0.0;
  double lateral = 0.0;
  double distance = 0.0;
  std::size_t segment = 0;
  Vec2 tangent;
};

class Polyline {
 public:
  Polyline() = default;
  explicit Polyline(std::vector<Vec2> points);

  const std::vector<Vec2>& points() const { return points_; }
  double length() const { return cumulative_.back(); }
  std::size_t segment_count() const { return points_.size() - 1; }
  double segment_start(std::size_t i) const { return cumulative_[i]; }
  double segment_length(std::size_t i) const { return cumulative_[i + 1] - cumulative_[i]; }
  Vec2 segment_direction(std::size_t i) const;

  Vec2 point_at(double s) const;
  Vec2 tangent_at(double s) const;
  double heading_at(double s) const;
  std::size_t segment_at(double s) const;

  // Nearest point; ties resolve to the lowest segment index.
  Projection project(Vec2 p) const;

  // Axis-aligned bounds of the points.
  std::array<double, 4> bounds() const;

 private:
  std::vector<Vec2> points_;
  std::vector<double> cumulative_;
};

/// Oriented rectangle footprint.
struct OrientedBox {
  Vec2 center;
  double heading = 0.0;
  double half_length = 0.0;
  double half_width = 0.0;

  std::array<Vec2, 4> corners() const;
  bool contains(Vec2 p) const;
  double bounding_radius() const { return std::hypot(half_length, half_width); }
};

// Separating-axis overlap test; touching boxes count as overlapping.
bool overlaps(const OrientedBox& a, const OrientedBox& b);

// Closed segment intersection test (collinear overlap counts).
bool segments_intersect(Vec2 a, Vec2 b, Vec2 c, Vec2 d);

}  // namespace affordrep
