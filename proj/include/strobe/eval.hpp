#pragma once

// Latency-aware and common mAP, plus end-to-end latency accounting.

#include <array>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "strobe/bev.hpp"
#include "strobe/geometry.hpp"

namespace strobe::eval {

struct EvalConfig {
  // per class: [loose, strict]; IoU for vehicles/cyclists, meters for peds
  std::array<std::array<double, 2>, kNumClasses> thresholds{{
      {0.5, 0.7},  // vehicle (IoU)
      {0.5, 0.3},  // pedestrian (centroid meters)
      {0.3, 0.5},  // cyclist (IoU)
  }};
  double range_cap = 72.0;
  // Packet-mode label gating to the emitting packet's region; the header only
  // sees region cells, recall elsewhere relies on earlier emissions.
  bool region_filter = true;
  double ped_radius = kPedestrianRadius;  // convention, flagged in the report
};

enum class LabelMode { Emission, Observation };

struct FrameRecord {
  int packet_index = 0;     // last packet for sweep frames
  Timestamp t_start;        // span start (first packet for sweeps)
  Timestamp t_end;          // emission time
  Pose2 ego_pose;
  bool has_region = false;
  double rx0 = 0, ry0 = 0, rx1 = 0, ry1 = 0;  // ego-frame meters
  bool is_sweep = false;
  double inference_ms = 0.0;
  std::vector<DetBox> dets;
};

struct DetectionRun {
  std::string scenario;
  std::uint64_t seed = 0;
  std::string mode;  // "packet" | "sweep"
  bool no_memory = false;
  bool no_map = false;
  std::vector<FrameRecord> frames;
};

struct LabelData {
  std::string scenario;
  std::uint64_t seed = 0;
  double duration_s = 0.0;
  std::vector<LabelTrack> tracks;
  std::map<int, int> first_observed;                 // actor id -> packet idx
  std::vector<std::map<int, int>> returns_per_packet;  // packet -> id -> count
  bev::MapLayerPolygons map;
};

struct LabelBox {
  int actor_id = 0;
  ClassId cls = ClassId::Vehicle;
  OrientedBox box;
  bool zero_points_this_frame = false;
};

// Labels for one emission frame. Emission mode queries tracks at the frame's
// emission time; observation mode at the time each actor's points were
// acquired.
std::vector<LabelBox> build_label_frame(const LabelData& labels, const FrameRecord& frame,
                                        LabelMode mode, const EvalConfig& cfg);

struct MatchResult {
  std::vector<std::pair<double, bool>> scored;  // (score, is_tp), frame order
  int num_labels = 0;
  std::vector<char> label_matched;  // per label of this frame
};

// Greedy matching in descending score; each label matched at most once.
MatchResult match_and_score(const std::vector<DetBox>& dets,
                            const std::vector<LabelBox>& labels, ClassId cls,
                            double threshold, const EvalConfig& cfg);

// All-point area under the precision envelope. NaN when num_labels == 0.
double average_precision(std::vector<std::pair<double, bool>> scored, int num_labels);

struct ApCell {
  double ap = 0.0;  // NaN when no labels
  int num_labels = 0;
  int num_dets = 0;
};

struct ZeroPointRecall {
  int total = 0;
  int matched = 0;
  double recall() const { return total > 0 ? static_cast<double>(matched) / total : 0.0; }
};

struct Report {
  std::string scenario;
  std::string mode;
  std::uint64_t seed = 0;
  // [mode][class][threshold]
  std::array<std::array<std::array<ApCell, 2>, kNumClasses>, 2> table;
  // recall at the loose threshold of labels with zero returns in the current
  // packet (packet frames only, latency labels)
  std::array<ZeroPointRecall, kNumClasses> zero_point;
  std::array<ZeroPointRecall, kNumClasses> seen_point;
  double accumulation_ms = 0.0;
  double inference_p50_ms = 0.0;
  double inference_p95_ms = 0.0;
  double mean_ap(LabelMode mode, int threshold_idx) const;
  std::string text() const;
};

Report evaluate(const DetectionRun& run, const LabelData& labels, const EvalConfig& cfg);

struct LatencyBreakdown {
  double accumulation_ms = 0.0;
  double inference_p50_ms = 0.0;
  double inference_p95_ms = 0.0;
  double total_p50_ms = 0.0;
};

LatencyBreakdown latency_breakdown(const DetectionRun& run);

}  // namespace strobe::eval
