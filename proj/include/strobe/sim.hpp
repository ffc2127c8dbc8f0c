#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "strobe/bev.hpp"
#include "strobe/geometry.hpp"

namespace strobe::sim {

struct SensorSpec {
  double spin_hz = 10.0;
  int packets_per_sweep = 10;
  std::vector<double> elevations;  // radians; defaults to 32 in [-15deg, +5deg]
  double azimuth_step = 0.2 * M_PI / 180.0;
  double max_range = 72.0;
  double dropout = 0.0;  // per-ray Bernoulli drop probability
  double height = 2.0;   // sensor mount height above ground

  static std::vector<double> default_elevations();
};

struct EgoSpec {
  // Piecewise-linear path traversed at constant speed; a single waypoint
  // means a stationary ego. Yaw follows the segment direction (or `yaw`
  // when stationary).
  std::vector<std::pair<double, double>> waypoints{{0.0, 0.0}};
  double speed = 0.0;
  double yaw = 0.0;

  Pose2 pose_at(double t_s) const;
};

struct ActorSpec {
  int id = 0;
  ClassId cls = ClassId::Vehicle;
  double length = 4.8;
  double width = 2.0;
  Pose2 start;          // pose at spawn
  double speed = 0.0;   // along heading (unicycle model)
  double yaw_rate = 0.0;
  double spawn_s = 0.0;
  double despawn_s = 1e9;

  Pose2 pose_at(double t_s) const;  // t relative to scenario start
  bool live_at(double t_s) const { return t_s >= spawn_s && t_s < despawn_s; }
};

struct ScenarioConfig {
  std::uint64_t seed = 1;
  double duration_s = 1.0;
  EgoSpec ego;
  std::vector<ActorSpec> actors;
  bev::MapLayerPolygons map;
  SensorSpec sensor;
  std::string name = "custom";

  void validate() const;  // throws std::invalid_argument on bad config
};

struct LabelAtEmission {
  int actor_id = 0;
  ClassId cls = ClassId::Vehicle;
  Pose2 pose;
  double length = 0.0;
  double width = 0.0;
};

struct SimFrame {
  Packet packet;
  // Every actor live at t_end with >= 1 return in any packet so far.
  std::vector<LabelAtEmission> labels_at_emission;
  // Return counts for this packet, keyed by actor id (absent = 0).
  std::map<int, int> returns_this_packet;
};

struct ScenarioData {
  ScenarioConfig config;
  std::vector<SimFrame> frames;
  std::vector<LabelTrack> tracks;  // states sampled every packet duration
  // first packet index in which each actor had a return
  std::map<int, int> first_observed;
};

// Deterministic generation of the full packet stream plus labels.
ScenarioData generate_scenario(const ScenarioConfig& cfg);

// Every live actor's pose at time t (label query used by evaluation).
std::vector<LabelAtEmission> labels_at(const ScenarioConfig& cfg, Timestamp t);

// Canned scenario library.
ScenarioConfig preset_scenario(const std::string& name);
std::vector<std::string> preset_names();

}  // namespace strobe::sim
