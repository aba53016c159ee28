#include "affordrep/geometry.hpp"

#include <algorithm>
#include <limits>
#include <stdexcept>

namespace affordrep {

double wrap_angle(double a) {
  const double two_pi = 2.0 * kPi;
  double w = a - two_pi * std::floor((a + kPi) / two_pi);
  if (w >= kPi) w -= two_pi;
  if (w < -kPi) w += two_pi;
  return w;
}

Polyline::Polyline(std::vector<Vec2> points) : points_(std::move(points)) {
  if (points_.size() < 2) throw std::invalid_argument("polyline needs at least two points");
  cumulative_.resize(points_.size());
  cumulative_[0] = 0.0;
  for (std::size_t i = 1; i < points_.size(); ++i) {
    const double len = norm(points_[i] - points_[i - 1]);
    if (!(len > 0.0)) throw std::invalid_argument("polyline segment with non-positive length");
    cumulative_[i] = cumulative_[i - 1] + len;
  }
}

Vec2 Polyline::segment_direction(std::size_t i) const {
  const Vec2 d = points_[i + 1] - points_[i];
  return d * (1.0 / segment_length(i));
}

std::size_t Polyline::segment_at(double s) const {
  if (s <= 0.0) return 0;
  auto it = std::upper_bound(cumulative_.begin(), cumulative_.end(), s);
  std::size_t idx = static_cast<std::size_t>(it - cumulative_.begin());
  if (idx == 0) return 0;
  return std::min(idx - 1, segment_count() - 1);
}

Vec2 Polyline::point_at(double s) const {
  const std::size_t i = segment_at(s);
  return points_[i] + segment_direction(i) * (s - cumulative_[i]);
}

Vec2 Polyline::tangent_at(double s) const { return segment_direction(segment_at(s)); }

double Polyline::heading_at(double s) const {
  const Vec2 t = tangent_at(s);
  return std::atan2(t.y, t.x);
}

Projection Polyline::project(Vec2 p) const {
  Projection best;
  double best_d2 = std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < segment_count(); ++i) {
    const Vec2 a = points_[i];
    const double len = segment_length(i);
    const Vec2 dir = (points_[i + 1] - a) * (1.0 / len);
    const Vec2 ap = p - a;
    const double t = std::clamp(dot(ap, dir), 0.0, len);
    const Vec2 q = a + dir * t;
    const Vec2 diff = p - q;
    const double d2 = dot(diff, diff);
    if (d2 < best_d2) {
      best_d2 = d2;
      best.s = cumulative_[i] + t;
      best.segment = i;
      best.tangent = dir;
      best.lateral = cross(dir, ap);
    }
  }
  best.distance = std::sqrt(best_d2);
  return best;
}

std::array<double, 4> Polyline::bounds() const {
  std::array<double, 4> b{points_[0].x, points_[0].y, points_[0].x, points_[0].y};
  for (const Vec2& p : points_) {
    b[0] = std::min(b[0], p.x);
    b[1] = std::min(b[1], p.y);
    b[2] = std::max(b[2], p.x);
    b[3] = std::max(b[3], p.y);
  }
  return b;
}

std::array<Vec2, 4> OrientedBox::corners() const {
  const Vec2 f = unit_from_heading(heading) * half_length;
  const Vec2 l = left_normal(unit_from_heading(heading)) * half_width;
  return {center + f + l, center - f + l, center - f - l, center + f - l};
}

bool OrientedBox::contains(Vec2 p) const {
  const Vec2 f = unit_from_heading(heading);
  const Vec2 d = p - center;
  return std::abs(dot(d, f)) <= half_length && std::abs(cross(f, d)) <= half_width;
}

namespace {

void project_onto(const std::array<Vec2, 4>& pts, Vec2 axis, double& lo, double& hi) {
  lo = hi = dot(pts[0], axis);
  for (std::size_t i = 1; i < 4; ++i) {
    const double v = dot(pts[i], axis);
    lo = std::min(lo, v);
    hi = std::max(hi, v);
  }
}

}  // namespace

bool overlaps(const OrientedBox& a, const OrientedBox& b) {
  const Vec2 gap = a.center - b.center;
  const double reach = a.bounding_radius() + b.bounding_radius();
  if (dot(gap, gap) > reach * reach) return false;
  const auto ca = a.corners();
  const auto cb = b.corners();
  const std::array<Vec2, 4> axes{unit_from_heading(a.heading), left_normal(unit_from_heading(a.heading)),
                                 unit_from_heading(b.heading), left_normal(unit_from_heading(b.heading))};
  for (const Vec2& axis : axes) {
    double a_lo, a_hi, b_lo, b_hi;
    project_onto(ca, axis, a_lo, a_hi);
    project_onto(cb, axis, b_lo, b_hi);
    if (a_hi < b_lo || b_hi < a_lo) return false;
  }
  return true;
}

namespace {

int orientation(Vec2 a, Vec2 b, Vec2 c) {
  const double v = cross(b - a, c - a);
  return (v > 0.0) - (v < 0.0);
}

bool on_segment(Vec2 a, Vec2 b, Vec2 p) {
  return std::min(a.x, b.x) <= p.x && p.x <= std::max(a.x, b.x) && std::min(a.y, b.y) <= p.y &&
         p.y <= std::max(a.y, b.y);
}

}  // namespace

bool segments_intersect(Vec2 a, Vec2 b, Vec2 c, Vec2 d) {
  const int o1 = orientation(a, b, c);
  const int o2 = orientation(a, b, d);
  const int o3 = orientation(c, d, a);
  const int o4 = orientation(c, d, b);
  if (o1 != o2 && o3 != o4) return true;
  if (o1 == 0 && on_segment(a, b, c)) return true;
  if (o2 == 0 && on_segment(a, b, d)) return true;
  if (o3 == 0 && on_segment(c, d, a)) return true;
  if (o4 == 0 && on_segment(c, d, b)) return true;
  return false;
}

}  // namespace affordrep
