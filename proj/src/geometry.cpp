#include "strobe/geometry.hpp"

#include <algorithm>

namespace strobe {

Pose2 pose_compose(const Pose2& a, const Pose2& b) {
  const double c = std::cos(a.yaw), s = std::sin(a.yaw);
  Pose2 out;
  out.x = a.x + c * b.x - s * b.y;
  out.y = a.y + s * b.x + c * b.y;
  out.yaw = wrap_angle(a.yaw + b.yaw);
  return out;
}

Pose2 pose_inverse(const Pose2& p) {
  const double c = std::cos(p.yaw), s = std::sin(p.yaw);
  Pose2 out;
  out.x = -(c * p.x + s * p.y);
  out.y = -(-s * p.x + c * p.y);
  out.yaw = wrap_angle(-p.yaw);
  return out;
}

void pose_apply(const Pose2& p, double lx, double ly, double& wx, double& wy) {
  const double c = std::cos(p.yaw), s = std::sin(p.yaw);
  wx = p.x + c * lx - s * ly;
  wy = p.y + s * lx + c * ly;
}

void pose_apply_inverse(const Pose2& p, double wx, double wy, double& lx, double& ly) {
  const double c = std::cos(p.yaw), s = std::sin(p.yaw);
  const double dx = wx - p.x, dy = wy - p.y;
  lx = c * dx + s * dy;
  ly = -s * dx + c * dy;
}

const char* class_name(ClassId c) {
  switch (c) {
    case ClassId::Vehicle: return "vehicle";
    case ClassId::Pedestrian: return "pedestrian";
    case ClassId::Cyclist: return "cyclist";
  }
  return "?";
}

std::optional<ClassId> class_from_name(const std::string& name) {
  if (name == "vehicle") return ClassId::Vehicle;
  if (name == "pedestrian") return ClassId::Pedestrian;
  if (name == "cyclist") return ClassId::Cyclist;
  return std::nullopt;
}

double class_height(ClassId c) {
  switch (c) {
    case ClassId::Vehicle: return 1.8;
    case ClassId::Pedestrian: return 1.7;
    case ClassId::Cyclist: return 1.6;
  }
  return 1.8;
}

std::vector<std::pair<double, double>> box_corners(const OrientedBox& b) {
  const double c = std::cos(b.heading), s = std::sin(b.heading);
  const double hl = 0.5 * b.length, hw = 0.5 * b.width;
  std::vector<std::pair<double, double>> out;
  out.reserve(4);
  const double lx[4] = {hl, -hl, -hl, hl};
  const double ly[4] = {hw, hw, -hw, -hw};
  for (int i = 0; i < 4; ++i) {
    out.emplace_back(b.cx + c * lx[i] - s * ly[i], b.cy + s * lx[i] + c * ly[i]);
  }
  return out;
}

namespace {

double polygon_area(const std::vector<std::pair<double, double>>& poly) {
  double a = 0.0;
  const size_t n = poly.size();
  for (size_t i = 0; i < n; ++i) {
    const auto& p = poly[i];
    const auto& q = poly[(i + 1) % n];
    a += p.first * q.second - q.first * p.second;
  }
  return 0.5 * std::fabs(a);
}

// Sutherland-Hodgman clip of a convex polygon against the half-plane left
// of the directed edge (a -> b).
std::vector<std::pair<double, double>> clip_halfplane(
    const std::vector<std::pair<double, double>>& poly,
    std::pair<double, double> a, std::pair<double, double> b) {
  std::vector<std::pair<double, double>> out;
  const size_t n = poly.size();
  auto side = [&](const std::pair<double, double>& p) {
    return (b.first - a.first) * (p.second - a.second) -
           (b.second - a.second) * (p.first - a.first);
  };
  for (size_t i = 0; i < n; ++i) {
    const auto& p = poly[i];
    const auto& q = poly[(i + 1) % n];
    const double sp = side(p), sq = side(q);
    if (sp >= 0.0) out.push_back(p);
    if ((sp > 0.0 && sq < 0.0) || (sp < 0.0 && sq > 0.0)) {
      const double t = sp / (sp - sq);
      out.emplace_back(p.first + t * (q.first - p.first),
                       p.second + t * (q.second - p.second));
    }
  }
  return out;
}

}  // namespace

double rotated_iou(const OrientedBox& a, const OrientedBox& b) {
  if (a.length <= 0.0 || a.width <= 0.0 || b.length <= 0.0 || b.width <= 0.0) {
    throw std::invalid_argument("rotated_iou: non-positive box dims");
  }
  auto pa = box_corners(a);
  auto pb = box_corners(b);
  std::vector<std::pair<double, double>> inter = pa;
  for (size_t i = 0; i < 4 && !inter.empty(); ++i) {
    inter = clip_halfplane(inter, pb[i], pb[(i + 1) % 4]);
  }
  const double ai = inter.size() >= 3 ? polygon_area(inter) : 0.0;
  const double area_a = a.length * a.width;
  const double area_b = b.length * b.width;
  const double u = area_a + area_b - ai;
  if (u <= 0.0) return 0.0;
  return std::clamp(ai / u, 0.0, 1.0);
}

double centroid_distance(double ax, double ay, double bx, double by) {
  return std::hypot(ax - bx, ay - by);
}

TrackQuery track_state_at(const LabelTrack& track, Timestamp t) {
  if (track.states.empty()) throw std::out_of_range("track has no states");
  const Timestamp first = track.states.front().t;
  const Timestamp last = track.states.back().t;
  if (t.micros < first.micros - kPacketDurationUs ||
      t.micros > last.micros + kPacketDurationUs) {
    throw std::out_of_range("track query outside allowed horizon");
  }
  // Latest state at or before t (front state when t precedes the track).
  auto it = std::upper_bound(
      track.states.begin(), track.states.end(), t,
      [](Timestamp q, const TrackState& s) { return q.micros < s.t.micros; });
  const TrackState& s = (it == track.states.begin()) ? *it : *(it - 1);
  const double dt = (t.micros - s.t.micros) * 1e-6;
  TrackQuery out;
  out.pose.x = s.pose.x + s.vx * dt;
  out.pose.y = s.pose.y + s.vy * dt;
  out.pose.yaw = wrap_angle(s.pose.yaw + s.yaw_rate * dt);
  out.length = track.length;
  out.width = track.width;
  return out;
}

}  // namespace strobe
