#include "strobe/sim.hpp"

#include <algorithm>
#include <random>
#include <set>
#include <stdexcept>

namespace strobe::sim {

std::vector<double> SensorSpec::default_elevations() {
  std::vector<double> out;
  const double lo = -15.0 * M_PI / 180.0, hi = 5.0 * M_PI / 180.0;
  const int n = 32;
  out.reserve(n);
  for (int i = 0; i < n; ++i) out.push_back(lo + (hi - lo) * i / (n - 1));
  return out;
}

Pose2 EgoSpec::pose_at(double t_s) const {
  if (waypoints.size() <= 1 || speed <= 0.0) {
    Pose2 p;
    p.x = waypoints.empty() ? 0.0 : waypoints[0].first;
    p.y = waypoints.empty() ? 0.0 : waypoints[0].second;
    p.yaw = yaw;
    return p;
  }
  double dist = speed * t_s;
  for (size_t i = 0; i + 1 < waypoints.size(); ++i) {
    const double dx = waypoints[i + 1].first - waypoints[i].first;
    const double dy = waypoints[i + 1].second - waypoints[i].second;
    const double seg = std::hypot(dx, dy);
    const double hdg = std::atan2(dy, dx);
    if (dist <= seg || i + 2 == waypoints.size()) {
      const double d = std::min(dist, seg);
      Pose2 p;
      p.x = waypoints[i].first + d / seg * dx;
      p.y = waypoints[i].second + d / seg * dy;
      p.yaw = hdg;
      return p;
    }
    dist -= seg;
  }
  Pose2 p;
  p.x = waypoints.back().first;
  p.y = waypoints.back().second;
  p.yaw = yaw;
  return p;
}

Pose2 ActorSpec::pose_at(double t_s) const {
  const double dt = t_s - spawn_s;
  Pose2 p = start;
  if (std::fabs(yaw_rate) < 1e-12) {
    p.x += speed * dt * std::cos(start.yaw);
    p.y += speed * dt * std::sin(start.yaw);
  } else {
    // unicycle: exact integral of constant speed + yaw rate
    const double th0 = start.yaw;
    const double th1 = start.yaw + yaw_rate * dt;
    p.x += speed / yaw_rate * (std::sin(th1) - std::sin(th0));
    p.y += speed / yaw_rate * (-std::cos(th1) + std::cos(th0));
  }
  p.yaw = wrap_angle(start.yaw + yaw_rate * dt);
  return p;
}

void ScenarioConfig::validate() const {
  if (duration_s <= 0.0) throw std::invalid_argument("duration must be positive");
  if (sensor.spin_hz * sensor.packets_per_sweep != 100.0)
    throw std::invalid_argument("spin_rate x packets_per_sweep must be 100 Hz");
  if (ego.speed < 0.0) throw std::invalid_argument("negative ego speed");
  if (sensor.dropout < 0.0 || sensor.dropout > 1.0)
    throw std::invalid_argument("dropout must be in [0,1]");
  if (sensor.azimuth_step <= 0.0) throw std::invalid_argument("bad azimuth step");
  std::set<int> ids;
  for (const auto& a : actors) {
    if (a.speed < 0.0) throw std::invalid_argument("negative actor speed");
    if (a.length <= 0.0 || a.width <= 0.0)
      throw std::invalid_argument("non-positive actor dims");
    if (!ids.insert(a.id).second) throw std::invalid_argument("duplicate actor id");
  }
}

namespace {

struct Hit {
  double t_horizontal = 0.0;  // horizontal distance along the ray
  double z = 0.0;
};

// 2D ray (origin o, unit dir d) against segment (p, q); returns horizontal
// distance or negative when there is no forward crossing.
double ray_segment(double ox, double oy, double dx, double dy, double px, double py,
                   double qx, double qy) {
  const double ex = qx - px, ey = qy - py;
  const double denom = dx * ey - dy * ex;
  if (std::fabs(denom) < 1e-12) return -1.0;
  const double wx = px - ox, wy = py - oy;
  const double t = (wx * ey - wy * ex) / denom;
  const double u = (wx * dy - wy * dx) / denom;
  if (t <= 1e-9 || u < 0.0 || u > 1.0) return -1.0;
  return t;
}

}  // namespace

ScenarioData generate_scenario(const ScenarioConfig& cfg) {
  cfg.validate();
  ScenarioData out;
  out.config = cfg;

  const auto elevations =
      cfg.sensor.elevations.empty() ? SensorSpec::default_elevations() : cfg.sensor.elevations;
  const int total_packets =
      static_cast<int>(std::llround(cfg.duration_s * 100.0));
  const double sector_span = 2.0 * M_PI / cfg.sensor.packets_per_sweep;

  std::mt19937_64 rng(cfg.seed);
  auto uniform = [&rng]() {
    return static_cast<double>(rng() >> 11) * (1.0 / 9007199254740992.0);
  };

  std::set<int> observed;  // actor ids with >= 1 return so far

  out.frames.reserve(static_cast<size_t>(total_packets));
  for (int pk = 0; pk < total_packets; ++pk) {
    SimFrame frame;
    Packet& packet = frame.packet;
    packet.sweep = pk / cfg.sensor.packets_per_sweep;
    packet.index = pk % cfg.sensor.packets_per_sweep;
    packet.t_start = Timestamp{static_cast<std::int64_t>(pk) * kPacketDurationUs};
    packet.t_end = Timestamp{packet.t_start.micros + kPacketDurationUs};
    packet.azimuth_begin = packet.index * sector_span;
    packet.azimuth_end = (packet.index + 1) * sector_span;
    packet.ego_pose = cfg.ego.pose_at(packet.t_end.seconds());

    const double sweep_start_s =
        packet.sweep * cfg.sensor.packets_per_sweep * kPacketDurationUs * 1e-6;
    const double sweep_yaw = cfg.ego.pose_at(sweep_start_s).yaw;

    const int steps = std::max(
        1, static_cast<int>(std::floor(sector_span / cfg.sensor.azimuth_step)));
    for (int step = 0; step < steps; ++step) {
      const double az_local = packet.azimuth_begin + step * cfg.sensor.azimuth_step;
      const double frac = (az_local - packet.azimuth_begin) / sector_span;
      const double t_ray_s = packet.t_start.seconds() + frac * kPacketDurationUs * 1e-6;
      const Pose2 ego = cfg.ego.pose_at(t_ray_s);
      const double theta = sweep_yaw + az_local;
      const double dx = std::cos(theta), dy = std::sin(theta);

      // Actor walls at the ray's timestamp (rolling shutter per ray).
      struct Wall {
        int actor = -1;
        double t = 0.0;
      };
      std::vector<std::pair<int, std::array<std::pair<double, double>, 4>>> rects;
      for (size_t ai = 0; ai < cfg.actors.size(); ++ai) {
        const auto& a = cfg.actors[ai];
        if (!a.live_at(t_ray_s)) continue;
        const Pose2 ap = a.pose_at(t_ray_s);
        OrientedBox box{ap.x, ap.y, a.length, a.width, ap.yaw};
        auto corners = box_corners(box);
        std::array<std::pair<double, double>, 4> arr;
        std::copy(corners.begin(), corners.end(), arr.begin());
        rects.emplace_back(static_cast<int>(ai), arr);
      }

      for (double elev : elevations) {
        const double u = uniform();  // one draw per candidate ray, always
        if (u < cfg.sensor.dropout) continue;

        const double tan_e = std::tan(elev);
        double best_t = -1.0;
        int best_actor = -1;
        // ground plane
        if (tan_e < 0.0) {
          best_t = -cfg.sensor.height / tan_e;
        }
        for (const auto& [ai, corners] : rects) {
          const double h = class_height(cfg.actors[static_cast<size_t>(ai)].cls);
          for (int e = 0; e < 4; ++e) {
            const auto& p = corners[static_cast<size_t>(e)];
            const auto& q = corners[static_cast<size_t>((e + 1) % 4)];
            const double t = ray_segment(ego.x, ego.y, dx, dy, p.first, p.second,
                                         q.first, q.second);
            if (t <= 0.0) continue;
            const double z = cfg.sensor.height + t * tan_e;
            if (z < 0.0 || z > h) continue;
            if (best_t < 0.0 || t < best_t) {
              best_t = t;
              best_actor = ai;
            }
          }
        }
        if (best_t < 0.0) continue;
        const double slant = best_t / std::cos(elev);
        if (slant > cfg.sensor.max_range) continue;

        LidarPoint point;
        point.x = ego.x + best_t * dx;
        point.y = ego.y + best_t * dy;
        point.z = cfg.sensor.height + best_t * tan_e;
        point.t = Timestamp{packet.t_start.micros +
                            static_cast<std::int64_t>(std::floor(frac * kPacketDurationUs))};
        packet.points.push_back(point);
        if (best_actor >= 0) {
          const int id = cfg.actors[static_cast<size_t>(best_actor)].id;
          frame.returns_this_packet[id] += 1;
          if (observed.insert(id).second) {
            out.first_observed[id] = pk;
          }
        }
      }
    }

    // Labels at emission: every previously or currently observed live actor.
    const double t_end_s = packet.t_end.seconds();
    for (const auto& a : cfg.actors) {
      if (!a.live_at(t_end_s)) continue;
      if (!observed.count(a.id)) continue;
      LabelAtEmission label;
      label.actor_id = a.id;
      label.cls = a.cls;
      label.pose = a.pose_at(t_end_s);
      label.length = a.length;
      label.width = a.width;
      frame.labels_at_emission.push_back(label);
    }
    out.frames.push_back(std::move(frame));
  }

  // Tracks sampled at packet resolution.
  for (const auto& a : cfg.actors) {
    LabelTrack track;
    track.actor_id = a.id;
    track.cls = a.cls;
    track.length = a.length;
    track.width = a.width;
    const double t0 = std::max(0.0, a.spawn_s);
    const double t1 = std::min(cfg.duration_s, a.despawn_s);
    for (std::int64_t us = Timestamp::from_seconds(t0).micros;
         us <= Timestamp::from_seconds(t1).micros; us += kPacketDurationUs) {
      const double ts = us * 1e-6;
      TrackState st;
      st.t = Timestamp{us};
      st.pose = a.pose_at(ts);
      st.vx = a.speed * std::cos(st.pose.yaw);
      st.vy = a.speed * std::sin(st.pose.yaw);
      st.yaw_rate = a.yaw_rate;
      track.states.push_back(st);
    }
    if (!track.states.empty()) out.tracks.push_back(std::move(track));
  }
  return out;
}

std::vector<LabelAtEmission> labels_at(const ScenarioConfig& cfg, Timestamp t) {
  const double ts = t.seconds();
  if (ts < 0.0 || ts > cfg.duration_s + kPacketDurationUs * 1e-6)
    throw std::out_of_range("labels_at: t outside scenario");
  std::vector<LabelAtEmission> out;
  for (const auto& a : cfg.actors) {
    if (!a.live_at(ts)) continue;
    LabelAtEmission label;
    label.actor_id = a.id;
    label.cls = a.cls;
    label.pose = a.pose_at(ts);
    label.length = a.length;
    label.width = a.width;
    out.push_back(label);
  }
  return out;
}

namespace {

std::vector<std::pair<double, double>> rect_poly(double x0, double y0, double x1,
                                                 double y1) {
  return {{x0, y0}, {x1, y0}, {x1, y1}, {x0, y1}};
}

ActorSpec parked_vehicle(int id, double x, double y, double yaw) {
  ActorSpec a;
  a.id = id;
  a.cls = ClassId::Vehicle;
  a.length = 4.8;
  a.width = 2.0;
  a.start = Pose2{x, y, yaw};
  return a;
}

}  // namespace

ScenarioConfig preset_scenario(const std::string& name) {
  ScenarioConfig cfg;
  cfg.name = name;
  if (name == "stationary_grid") {
    cfg.duration_s = 1.0;
    cfg.seed = 11;
    int id = 1;
    for (int gx = -1; gx <= 1; ++gx) {
      for (int gy = -1; gy <= 1; ++gy) {
        if (gx == 0 && gy == 0) continue;  // ego cell
        cfg.actors.push_back(parked_vehicle(id++, gx * 10.0, gy * 10.0, 0.3 * id));
      }
    }
    cfg.map.roads.push_back(rect_poly(-20, -20, 20, 20));
  } else if (name == "crossing_pedestrians") {
    cfg.duration_s = 1.0;
    cfg.seed = 12;
    cfg.ego.waypoints = {{0.0, 0.0}, {20.0, 0.0}};
    cfg.ego.speed = 2.0;
    for (int i = 0; i < 2; ++i) {
      ActorSpec p;
      p.id = 1 + i;
      p.cls = ClassId::Pedestrian;
      p.length = 0.6;
      p.width = 0.6;
      p.start = Pose2{8.0 + 2.0 * i, -4.0, M_PI / 2.0};
      p.speed = 1.5;
      cfg.actors.push_back(p);
    }
    cfg.map.roads.push_back(rect_poly(-10, -6, 40, 6));
    cfg.map.crosswalks.push_back(rect_poly(7, -6, 11, 6));
  } else if (name == "fast_overtake") {
    cfg.duration_s = 1.0;
    cfg.seed = 13;
    ActorSpec v;
    v.id = 1;
    v.cls = ClassId::Vehicle;
    v.length = 4.8;
    v.width = 2.0;
    v.start = Pose2{16.0, 0.5, M_PI / 2.0};
    v.speed = 10.0;
    cfg.actors.push_back(v);
    cfg.map.roads.push_back(rect_poly(13, -10, 19, 20));
  } else if (name == "occlusion_alley") {
    cfg.duration_s = 0.5;
    cfg.seed = 14;
    // Parked vehicles along a diagonal; each packet's region bbox covers
    // neighbours from adjacent sectors, so most packets carry in-region
    // actors with zero returns this packet.
    cfg.actors.push_back(parked_vehicle(1, 7.0, 2.0, 0.2));
    cfg.actors.push_back(parked_vehicle(2, 4.0, 7.5, 1.2));
    cfg.actors.push_back(parked_vehicle(3, -2.0, 9.0, -0.6));
    cfg.actors.push_back(parked_vehicle(4, 9.5, -3.0, 0.9));
    cfg.map.roads.push_back(rect_poly(-14, -14, 14, 14));
  } else if (name == "empty_scene") {
    cfg.duration_s = 0.3;
    cfg.seed = 15;
  } else {
    throw std::invalid_argument("unknown scenario preset: " + name);
  }
  return cfg;
}

std::vector<std::string> preset_names() {
  return {"stationary_grid", "crossing_pedestrians", "fast_overtake", "occlusion_alley",
          "empty_scene"};
}

}  // namespace strobe::sim
