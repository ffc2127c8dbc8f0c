#pragma once

#include <cmath>
#include <cstdint>
#include <compare>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace strobe {

// Microseconds since scenario start.
struct Timestamp {
  std::int64_t micros = 0;
  auto operator<=>(const Timestamp&) const = default;
  double seconds() const { return static_cast<double>(micros) * 1e-6; }
  static Timestamp from_seconds(double s) {
    return Timestamp{static_cast<std::int64_t>(std::llround(s * 1e6))};
  }
};

inline double wrap_angle(double a) {
  // wraps to (-pi, pi]
  a = std::fmod(a, 2.0 * M_PI);
  if (a <= -M_PI) a += 2.0 * M_PI;
  if (a > M_PI) a -= 2.0 * M_PI;
  return a;
}

struct Pose2 {
  double x = 0.0;
  double y = 0.0;
  double yaw = 0.0;

  bool operator==(const Pose2&) const = default;
};

Pose2 pose_compose(const Pose2& a, const Pose2& b);
Pose2 pose_inverse(const Pose2& p);
// Maps a point expressed in the pose's frame into the parent frame.
void pose_apply(const Pose2& p, double lx, double ly, double& wx, double& wy);
// Maps a parent-frame point into the pose's local frame.
void pose_apply_inverse(const Pose2& p, double wx, double wy, double& lx, double& ly);

enum class ClassId { Vehicle = 0, Pedestrian = 1, Cyclist = 2 };
constexpr int kNumClasses = 3;

const char* class_name(ClassId c);
std::optional<ClassId> class_from_name(const std::string& name);

// Extruded box height used by the 2.5D ray caster.
double class_height(ClassId c);

struct DetBox {
  ClassId cls = ClassId::Vehicle;
  double cx = 0.0;
  double cy = 0.0;
  double length = 0.0;  // unused for pedestrians
  double width = 0.0;   // unused for pedestrians
  double heading = 0.0; // unused for pedestrians
  double score = 0.0;
  Timestamp emitted_at;
};

struct OrientedBox {
  double cx = 0.0, cy = 0.0, length = 0.0, width = 0.0, heading = 0.0;
};

// Intersection-over-union of two oriented rectangles via convex clipping.
double rotated_iou(const OrientedBox& a, const OrientedBox& b);

double centroid_distance(double ax, double ay, double bx, double by);

// Corners in CCW order.
std::vector<std::pair<double, double>> box_corners(const OrientedBox& b);

struct TrackState {
  Timestamp t;
  Pose2 pose;
  double vx = 0.0;       // world frame, m/s
  double vy = 0.0;
  double yaw_rate = 0.0; // rad/s
};

struct LabelTrack {
  int actor_id = 0;
  ClassId cls = ClassId::Vehicle;
  double length = 0.0;
  double width = 0.0;
  std::vector<TrackState> states;  // sorted by time
};

// Constant-velocity + constant-yaw-rate extrapolation from the latest state
// at or before t. Queries up to one packet duration (10ms) beyond either end
// are allowed; anything further throws std::out_of_range.
struct TrackQuery {
  Pose2 pose;
  double length = 0.0;
  double width = 0.0;
};
TrackQuery track_state_at(const LabelTrack& track, Timestamp t);

struct LidarPoint {
  double x = 0.0, y = 0.0, z = 0.0;
  Timestamp t;
};

struct Packet {
  int index = 0;          // 0..9 within the sweep
  int sweep = 0;
  Timestamp t_start;
  Timestamp t_end;
  Pose2 ego_pose;         // pose at t_end
  double azimuth_begin = 0.0;  // sensor frame at sweep start
  double azimuth_end = 0.0;
  std::vector<LidarPoint> points;  // world frame
};

constexpr std::int64_t kPacketDurationUs = 10000;
constexpr int kPacketsPerSweep = 10;

// Fixed radius used when a pedestrian needs an area (NMS).
constexpr double kPedestrianRadius = 0.4;

}  // namespace strobe
