#include "strobe/eval.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace strobe::eval {

namespace {

bool track_live_at(const LabelTrack& t, Timestamp ts) {
  return ts.micros >= t.states.front().t.micros - kPacketDurationUs &&
         ts.micros <= t.states.back().t.micros + kPacketDurationUs;
}

// t_start of the packet whose points represent this actor for the frame:
// the first packet of the frame's span with returns, else the most recent
// earlier packet with returns.
std::optional<Timestamp> observation_time(const LabelData& labels, const FrameRecord& frame,
                                          int actor_id) {
  const int span_first = static_cast<int>(frame.t_start.micros / kPacketDurationUs);
  const int span_last = frame.packet_index;
  auto has_returns = [&](int p) {
    if (p < 0 || p >= static_cast<int>(labels.returns_per_packet.size())) return false;
    const auto& m = labels.returns_per_packet[static_cast<size_t>(p)];
    auto it = m.find(actor_id);
    return it != m.end() && it->second > 0;
  };
  for (int p = span_first; p <= span_last; ++p) {
    if (has_returns(p)) return Timestamp{static_cast<std::int64_t>(p) * kPacketDurationUs};
  }
  for (int p = span_first - 1; p >= 0; --p) {
    if (has_returns(p)) return Timestamp{static_cast<std::int64_t>(p) * kPacketDurationUs};
  }
  return std::nullopt;
}

}  // namespace

std::vector<LabelBox> build_label_frame(const LabelData& labels, const FrameRecord& frame,
                                        LabelMode mode, const EvalConfig& cfg) {
  std::vector<LabelBox> out;
  for (const auto& track : labels.tracks) {
    auto fo = labels.first_observed.find(track.actor_id);
    if (fo == labels.first_observed.end()) continue;  // never seen: unscoreable
    if (fo->second > frame.packet_index) continue;    // counts from first observation

    Timestamp query = frame.t_end;
    if (mode == LabelMode::Observation) {
      auto obs = observation_time(labels, frame, track.actor_id);
      if (!obs) continue;
      query = *obs;
    }
    if (!track_live_at(track, query)) continue;
    if (mode == LabelMode::Emission && !track_live_at(track, frame.t_end)) continue;

    TrackQuery q;
    try {
      q = track_state_at(track, query);
    } catch (const std::out_of_range&) {
      continue;
    }
    // range cap relative to the emitting pose
    if (centroid_distance(q.pose.x, q.pose.y, frame.ego_pose.x, frame.ego_pose.y) >
        cfg.range_cap) {
      continue;
    }
    if (cfg.region_filter && frame.has_region && !frame.is_sweep) {
      double ex, ey;
      pose_apply_inverse(frame.ego_pose, q.pose.x, q.pose.y, ex, ey);
      if (ex < frame.rx0 || ex >= frame.rx1 || ey < frame.ry0 || ey >= frame.ry1) continue;
    }
    LabelBox lb;
    lb.actor_id = track.actor_id;
    lb.cls = track.cls;
    lb.box = OrientedBox{q.pose.x, q.pose.y, q.length, q.width, q.pose.yaw};
    const int p = frame.packet_index;
    const auto& rp = labels.returns_per_packet;
    bool seen_now = false;
    if (p >= 0 && p < static_cast<int>(rp.size())) {
      auto it = rp[static_cast<size_t>(p)].find(track.actor_id);
      seen_now = it != rp[static_cast<size_t>(p)].end() && it->second > 0;
    }
    lb.zero_points_this_frame = !seen_now;
    out.push_back(lb);
  }
  return out;
}

MatchResult match_and_score(const std::vector<DetBox>& dets,
                            const std::vector<LabelBox>& labels, ClassId cls,
                            double threshold, const EvalConfig& cfg) {
  MatchResult out;
  std::vector<int> label_idx;
  for (size_t i = 0; i < labels.size(); ++i) {
    if (labels[i].cls == cls) label_idx.push_back(static_cast<int>(i));
  }
  out.num_labels = static_cast<int>(label_idx.size());
  out.label_matched.assign(label_idx.size(), 0);

  std::vector<int> det_order;
  for (size_t i = 0; i < dets.size(); ++i) {
    if (dets[i].cls == cls) det_order.push_back(static_cast<int>(i));
  }
  std::stable_sort(det_order.begin(), det_order.end(), [&](int a, int b) {
    return dets[static_cast<size_t>(a)].score > dets[static_cast<size_t>(b)].score;
  });

  for (int di : det_order) {
    const DetBox& d = dets[static_cast<size_t>(di)];
    int best = -1;
    double best_quality = 0.0;
    for (size_t li = 0; li < label_idx.size(); ++li) {
      if (out.label_matched[li]) continue;
      const LabelBox& lb = labels[static_cast<size_t>(label_idx[li])];
      if (cls == ClassId::Pedestrian) {
        const double dist = centroid_distance(d.cx, d.cy, lb.box.cx, lb.box.cy);
        if (dist > threshold) continue;
        const double quality = -dist;
        if (best < 0 || quality > best_quality) {
          best = static_cast<int>(li);
          best_quality = quality;
        }
      } else {
        const double iou = rotated_iou({d.cx, d.cy, d.length, d.width, d.heading}, lb.box);
        if (iou < threshold) continue;
        if (best < 0 || iou > best_quality) {
          best = static_cast<int>(li);
          best_quality = iou;
        }
      }
    }
    if (best >= 0) {
      out.label_matched[static_cast<size_t>(best)] = 1;
      out.scored.emplace_back(d.score, true);
    } else {
      out.scored.emplace_back(d.score, false);
    }
  }
  return out;
}

double average_precision(std::vector<std::pair<double, bool>> scored, int num_labels) {
  if (num_labels == 0) return std::nan("");
  if (scored.empty()) return 0.0;
  std::stable_sort(scored.begin(), scored.end(),
                   [](const auto& a, const auto& b) { return a.first > b.first; });
  // precision envelope integrated over recall
  std::vector<double> precision, recall;
  int tp = 0, fp = 0;
  for (const auto& [score, is_tp] : scored) {
    (void)score;
    if (is_tp) ++tp; else ++fp;
    precision.push_back(static_cast<double>(tp) / (tp + fp));
    recall.push_back(static_cast<double>(tp) / num_labels);
  }
  for (int i = static_cast<int>(precision.size()) - 2; i >= 0; --i) {
    precision[static_cast<size_t>(i)] =
        std::max(precision[static_cast<size_t>(i)], precision[static_cast<size_t>(i) + 1]);
  }
  double ap = 0.0;
  double prev_recall = 0.0;
  for (size_t i = 0; i < precision.size(); ++i) {
    if (recall[i] > prev_recall) {
      ap += (recall[i] - prev_recall) * precision[i];
      prev_recall = recall[i];
    }
  }
  return ap;
}

Report evaluate(const DetectionRun& run, const LabelData& labels, const EvalConfig& cfg) {
  if (run.scenario != labels.scenario || run.seed != labels.seed) {
    throw std::invalid_argument("evaluate: detection run and labels are from different scenarios");
  }
  Report rep;
  rep.scenario = run.scenario;
  rep.mode = run.mode;
  rep.seed = run.seed;

  for (int mi = 0; mi < 2; ++mi) {
    const LabelMode mode = mi == 0 ? LabelMode::Emission : LabelMode::Observation;
    for (int ci = 0; ci < kNumClasses; ++ci) {
      const ClassId cls = static_cast<ClassId>(ci);
      for (int ti = 0; ti < 2; ++ti) {
        const double thr = cfg.thresholds[static_cast<size_t>(ci)][static_cast<size_t>(ti)];
        std::vector<std::pair<double, bool>> pooled;
        int total_labels = 0, total_dets = 0;
        for (const auto& frame : run.frames) {
          const auto lbls = build_label_frame(labels, frame, mode, cfg);
          auto m = match_and_score(frame.dets, lbls, cls, thr, cfg);
          pooled.insert(pooled.end(), m.scored.begin(), m.scored.end());
          total_labels += m.num_labels;
          total_dets += static_cast<int>(m.scored.size());

          // zero-point split at the loose threshold, latency labels
          if (mode == LabelMode::Emission && ti == 0 && !frame.is_sweep) {
            size_t li = 0;
            for (const auto& lb : lbls) {
              if (lb.cls != cls) continue;
              auto& bucket = lb.zero_points_this_frame
                                 ? rep.zero_point[static_cast<size_t>(ci)]
                                 : rep.seen_point[static_cast<size_t>(ci)];
              ++bucket.total;
              if (m.label_matched[li]) ++bucket.matched;
              ++li;
            }
          }
        }
        auto& cell = rep.table[static_cast<size_t>(mi)][static_cast<size_t>(ci)]
                              [static_cast<size_t>(ti)];
        cell.ap = average_precision(std::move(pooled), total_labels);
        cell.num_labels = total_labels;
        cell.num_dets = total_dets;
      }
    }
  }
  const auto lat = latency_breakdown(run);
  rep.accumulation_ms = lat.accumulation_ms;
  rep.inference_p50_ms = lat.inference_p50_ms;
  rep.inference_p95_ms = lat.inference_p95_ms;
  return rep;
}

double Report::mean_ap(LabelMode mode, int threshold_idx) const {
  const size_t mi = mode == LabelMode::Emission ? 0 : 1;
  double sum = 0.0;
  int n = 0;
  for (int ci = 0; ci < kNumClasses; ++ci) {
    const double ap = table[mi][static_cast<size_t>(ci)][static_cast<size_t>(threshold_idx)].ap;
    if (!std::isnan(ap)) {
      sum += ap;
      ++n;
    }
  }
  return n > 0 ? sum / n : std::nan("");
}

std::string Report::text() const {
  std::ostringstream os;
  os.precision(4);
  os << std::fixed;
  os << "scenario: " << scenario << "  mode: " << mode << "  seed: " << seed << "\n";
  os << "pedestrian match radius convention: 0.4 m disc (centroid thresholds)\n";
  const char* mode_names[2] = {"Latency mAP (labels at emission time)",
                               "Common mAP (labels at observation time)"};
  for (int mi = 0; mi < 2; ++mi) {
    os << "== " << mode_names[mi] << " ==\n";
    os << "  class        thr1      AP     thr2      AP   labels\n";
    const double thr[kNumClasses][2] = {{0.5, 0.7}, {0.5, 0.3}, {0.3, 0.5}};
    for (int ci = 0; ci < kNumClasses; ++ci) {
      const auto& c0 = table[static_cast<size_t>(mi)][static_cast<size_t>(ci)][0];
      const auto& c1 = table[static_cast<size_t>(mi)][static_cast<size_t>(ci)][1];
      os << "  " << class_name(static_cast<ClassId>(ci));
      for (size_t pad = std::string(class_name(static_cast<ClassId>(ci))).size(); pad < 11;
           ++pad)
        os << ' ';
      os << thr[ci][0] << "  ";
      if (std::isnan(c0.ap)) os << "   nan"; else os << c0.ap;
      os << "   " << thr[ci][1] << "  ";
      if (std::isnan(c1.ap)) os << "   nan"; else os << c1.ap;
      os << "   " << c0.num_labels << "\n";
    }
  }
  // Measured inference timings are deliberately left out: report files must
  // be byte-identical across runs of the same seed. See latency_breakdown.
  os << "latency: accumulation " << accumulation_ms << " ms (simulated clock)\n";
  return os.str();
}

LatencyBreakdown latency_breakdown(const DetectionRun& run) {
  LatencyBreakdown out;
  out.accumulation_ms = run.mode == "sweep" ? 100.0 : 10.0;
  std::vector<double> times;
  for (const auto& f : run.frames) times.push_back(f.inference_ms);
  if (!times.empty()) {
    std::sort(times.begin(), times.end());
    out.inference_p50_ms = times[times.size() / 2];
    out.inference_p95_ms = times[std::min(times.size() - 1, times.size() * 95 / 100)];
  }
  out.total_p50_ms = out.accumulation_ms + out.inference_p50_ms;
  return out;
}

}  // namespace strobe::eval
